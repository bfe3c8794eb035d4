"""Exact and approximate k-nearest-neighbor indexes over training locations.

Both backends return neighbor lists sorted by nondecreasing distance with
ties broken by ascending training index, so results are reproducible on
gridded data where equal distances are common. Leave-one-out queries
exclude the query point's own index (not merely zero distances, so
duplicate locations keep each other as neighbors).
"""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, ParameterError

# Distances are recomputed with numpy after candidate collection so the
# sort key is identical across backends; the ball radius gets this much
# relative slack to survive last-ulp disagreement with the tree.
_RADIUS_SLACK = 1e-9


def build(locations, backend: str = "exact", **params):
    """Build a neighbor index.

    Parameters
    ----------
    locations : (n, p) array
        Reference (training) coordinates.
    backend : str
        ``"exact"`` or ``"approximate"``.
    **params
        Forwarded to the backend constructor. The approximate backend
        accepts ``degree``, ``construction_beam``, ``query_beam``,
        ``seed``.

    Returns
    -------
    ExactIndex or HnswIndex
    """
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 2:
        raise ParameterError(f"locations must be (n, p), got shape {locations.shape}")
    if not np.all(np.isfinite(locations)):
        raise DataError("locations contain non-finite coordinates")
    if locations.shape[0] < 2:
        raise DataError(f"need at least 2 points to build an index, got {locations.shape[0]}")
    if backend == "exact":
        return ExactIndex(locations, **params)
    if backend == "approximate":
        return HnswIndex(locations, **params)
    raise ParameterError(f"unknown backend {backend!r}")


def _finish(points, cand_lists, coords, k, exclude=None):
    """Order candidate ids by (distance, id) and truncate to k."""
    m = points.shape[0]
    ids = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k), dtype=float)
    for r in range(m):
        cand = np.asarray(cand_lists[r], dtype=np.int64)
        if exclude is not None:
            cand = cand[cand != exclude[r]]
        d = np.sqrt(((coords[cand] - points[r]) ** 2).sum(axis=1))
        order = np.lexsort((cand, d))[:k]
        ids[r] = cand[order]
        dist[r] = d[order]
    return ids, dist


class ExactIndex:
    """Ground-truth k-nearest-neighbor index.

    Uses a kd-tree for p <= 3 and brute force with partial selection in
    higher dimensions.
    """

    backend = "exact"

    def __init__(self, locations):
        self.coords = np.asarray(locations, dtype=float)
        self.n, self.dim = self.coords.shape
        self._tree = cKDTree(self.coords) if self.dim <= 3 else None

    def _candidates(self, points, kq):
        """Ids within the kq-th neighbor distance of each query point.

        Collecting everything inside that radius (not just the first kq
        tree hits) is what makes the ascending-index tie-break exact.
        """
        if self._tree is not None:
            d, _ = self._tree.query(points, k=kq)
            d = d.reshape(points.shape[0], kq)
            r = d[:, -1] * (1.0 + _RADIUS_SLACK) + 1e-300
            return self._tree.query_ball_point(points, r)
        out = []
        for x in points:
            row = np.sqrt(((self.coords - x) ** 2).sum(axis=1))
            kth = np.partition(row, kq - 1)[kq - 1]
            out.append(np.nonzero(row <= kth * (1.0 + _RADIUS_SLACK) + 1e-300)[0])
        return out

    def query(self, points, k: int):
        """k nearest training points to each query location.

        Parameters
        ----------
        points : (m, p) or (p,) array
        k : int
            1 <= k <= n.

        Returns
        -------
        ids : (m, k) int ndarray
        dist : (m, k) ndarray
            Distances, nondecreasing along each row.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not 1 <= k <= self.n:
            raise ParameterError(f"k must be in [1, {self.n}], got {k}")
        return _finish(points, self._candidates(points, k), self.coords, k)

    def query_loo(self, i: int, k: int):
        """k nearest training points to training point ``i``, excluding ``i``."""
        ids, dist = self.query_loo_many(np.array([i]), k)
        return ids[0], dist[0]

    def query_loo_many(self, train_ids, k: int):
        """Vectorized leave-one-out query for several training points."""
        train_ids = np.asarray(train_ids, dtype=np.int64)
        if not 1 <= k <= self.n - 1:
            raise ParameterError(f"k must be in [1, {self.n - 1}] for leave-one-out, got {k}")
        points = self.coords[train_ids]
        cands = self._candidates(points, k + 1)
        return _finish(points, cands, self.coords, k, exclude=train_ids)


class HnswIndex:
    """Approximate nearest neighbors via a navigable small-world graph.

    A layered proximity graph: each point gets a geometric random level,
    upper layers hold ``degree`` links, the base layer ``2 * degree``.
    Inserts and queries walk greedily down the layers and run a beam
    search at the target layer.
    """

    backend = "approximate"

    def __init__(self, locations, degree: int = 16, construction_beam: int = 200,
                 query_beam: int = 100, seed: int = 0):
        self.coords = np.asarray(locations, dtype=float)
        self.n, self.dim = self.coords.shape
        self.degree = int(degree)
        self.query_beam = int(query_beam)
        self._construction_beam = int(construction_beam)
        rng = np.random.default_rng(seed)
        level_scale = 1.0 / math.log(self.degree)
        levels = np.floor(-np.log(rng.uniform(1e-12, 1.0, self.n)) * level_scale).astype(int)
        self._levels = levels
        self._graphs = [dict() for _ in range(int(levels.max()) + 1)]
        self._entry = 0
        for i in range(self.n):
            self._insert(i)

    def _dist(self, q, ids):
        return np.sqrt(((self.coords[ids] - q) ** 2).sum(axis=1))

    def _greedy(self, q, entry, layer):
        """Walk to a local minimum of distance within one layer."""
        cur = entry
        cur_d = float(self._dist(q, np.array([cur]))[0])
        improved = True
        while improved:
            improved = False
            neigh = self._graphs[layer][cur]
            if not neigh:
                break
            arr = np.fromiter(neigh, dtype=np.int64, count=len(neigh))
            d = self._dist(q, arr)
            j = int(np.argmin(d))
            if d[j] < cur_d:
                cur, cur_d = int(arr[j]), float(d[j])
                improved = True
        return cur, cur_d

    def _search_layer(self, q, entries, ef, layer):
        """Beam search; returns (distance, id) pairs, best first."""
        graph = self._graphs[layer]
        visited = set()
        cand = []
        best = []
        for e, de in entries:
            if e in visited:
                continue
            visited.add(e)
            heapq.heappush(cand, (de, e))
            heapq.heappush(best, (-de, e))
        while cand:
            d, c = heapq.heappop(cand)
            if d > -best[0][0] and len(best) >= ef:
                break
            fresh = [v for v in graph[c] if v not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            arr = np.array(fresh, dtype=np.int64)
            dn = self._dist(q, arr)
            bound = -best[0][0]
            for dd, vv in zip(dn.tolist(), fresh):
                if len(best) < ef or dd < bound:
                    heapq.heappush(cand, (dd, vv))
                    heapq.heappush(best, (-dd, vv))
                    if len(best) > ef:
                        heapq.heappop(best)
                    bound = -best[0][0]
        return sorted((-d, v) for d, v in best)

    def _insert(self, i):
        level = int(self._levels[i])
        for l in range(len(self._graphs)):
            if l <= level and i not in self._graphs[l]:
                self._graphs[l][i] = []
        if i == 0:
            self._entry = 0
            return
        q = self.coords[i]
        top = int(self._levels[self._entry])
        cur, cur_d = self._entry, float(self._dist(q, np.array([self._entry]))[0])
        for l in range(top, level, -1):
            if l < len(self._graphs) and cur in self._graphs[l]:
                cur, cur_d = self._greedy(q, cur, l)
        entries = [(cur, cur_d)]
        for l in range(min(level, top), -1, -1):
            found = self._search_layer(q, entries, self._construction_beam, l)
            cap = self.degree if l > 0 else 2 * self.degree
            chosen = [v for _, v in found[:cap]]
            self._graphs[l][i] = list(chosen)
            for v in chosen:
                links = self._graphs[l][v]
                links.append(i)
                if len(links) > cap:
                    arr = np.array(links, dtype=np.int64)
                    d = self._dist(self.coords[v], arr)
                    keep = np.lexsort((arr, d))[:cap]
                    self._graphs[l][v] = arr[keep].tolist()
            entries = [(v, d) for d, v in found[:1]]
        if level > top:
            self._entry = i

    def _search(self, q, ef):
        top = int(self._levels[self._entry])
        cur, cur_d = self._entry, float(self._dist(q, np.array([self._entry]))[0])
        for l in range(top, 0, -1):
            cur, cur_d = self._greedy(q, cur, l)
        return self._search_layer(q, [(cur, cur_d)], ef, 0)

    def query(self, points, k: int):
        """Approximate k nearest neighbors for each query location."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not 1 <= k <= self.n:
            raise ParameterError(f"k must be in [1, {self.n}], got {k}")
        m = points.shape[0]
        ids = np.empty((m, k), dtype=np.int64)
        dist = np.empty((m, k), dtype=float)
        ef = max(self.query_beam, k)
        for r in range(m):
            found = self._search(points[r], ef)
            cand = [v for _, v in found]
            rid, rd = _finish(points[r : r + 1], [cand], self.coords, k)
            ids[r], dist[r] = rid[0], rd[0]
        return ids, dist

    def query_loo(self, i: int, k: int):
        """Approximate k nearest neighbors of training point ``i``, excluding ``i``."""
        ids, dist = self.query_loo_many(np.array([i]), k)
        return ids[0], dist[0]

    def query_loo_many(self, train_ids, k: int):
        train_ids = np.asarray(train_ids, dtype=np.int64)
        if not 1 <= k <= self.n - 1:
            raise ParameterError(f"k must be in [1, {self.n - 1}] for leave-one-out, got {k}")
        m = train_ids.shape[0]
        ids = np.empty((m, k), dtype=np.int64)
        dist = np.empty((m, k), dtype=float)
        ef = max(self.query_beam, k + 1)
        for r, i in enumerate(train_ids):
            q = self.coords[i]
            found = self._search(q, ef)
            cand = [v for _, v in found]
            rid, rd = _finish(q[None, :], [cand], self.coords, k, exclude=np.array([i]))
            ids[r], dist[r] = rid[0], rd[0]
        return ids, dist
