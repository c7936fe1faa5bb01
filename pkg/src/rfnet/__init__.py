"""Rectified factor networks.

Factor analysis whose posterior means are constrained to be non-negative
and normalized, giving sparse codes that still model the data covariance.

Setting ``RFNET_NUM_THREADS`` before import caps the BLAS thread pools.
"""

import os as _os

if _os.environ.get("RFNET_NUM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["RFNET_NUM_THREADS"])

from .kernels import BACKEND
from .metrics import metric_co, metric_er, metric_sp
from .model import (
    GeneralGaussian,
    RfnModel,
    StandardNormal,
    center,
    covariance,
    estep_stats,
    expected_recon_error,
    fa_em_fit,
    kl_gaussian,
    log_likelihood,
    objective_F,
    posterior_moments,
    posterior_moments_general,
)
from .numerics import NoConvergence, NotPositiveDefinite
from .projection import CascadeConfig, ProjectionKind, Stage, estep_project, rectify, rectify_normalize
from .trainer import TrainConfig, TrainingError, stack, train, transform

__version__ = "0.1.0"
