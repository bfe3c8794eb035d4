"""Scalable Gaussian-process regression via nearest-neighbor local kriging.

Kernel hyperparameters are trained by minimizing a batched leave-one-out
cross-validation loss restricted to k-nearest-neighbor kriging, so
training cost is O(b k^3) regardless of the training set size. Local
posterior prediction, dense small-n oracles, scoring metrics, gridded
data handling, and a command-line pipeline round out the toolkit.
"""

from .data import (CsvSchema, GridDataset, NormalizationTransform, load_csv,
                   mask_split, read_predictions, simulate_gp, write_grid_csv,
                   write_predictions)
from .errors import (ConfigError, DataError, NumericalError, ParameterError,
                     SingularMatrixError)
from .kernels import (RBF_NU_THRESHOLD, HyperParams, cross_covariance,
                      local_covariance, matern, pairwise_distances)
from .linalg import quad_form, quad_form_stack, solve_spd, solve_spd_stack
from .meanmodels import (ConstantMean, GridSpec, LinearMean, SmootherMean,
                         detrend, fit_constant, fit_linear, fit_smoother, retrend)
from .metrics import (MetricsReport, coverage, crps_gaussian, evaluate,
                      interval_score, mae, rmse)
from .neighbors import ExactIndex, HnswIndex, build as build_index
from .predictor import (ORACLE_CAP, PosteriorPrediction, log_likelihood,
                        predict_full, predict_nn)
from .trainer import (BatchSpec, TrainingSet, TrainResult, batched_loss,
                      estimate_sigma_sq, loo_predict_nn, optimize,
                      prefetch_neighborhoods, sample_batch)

__version__ = "0.1.0"
