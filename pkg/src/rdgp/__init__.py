"""Residual deep Gaussian processes on hyperspheres."""

from .errors import RdgpError
from .gvf import FramePrior, HodgePrior, ProjectedPrior, gvf_cov, gvf_features
from .kernels import HodgeSpec, MaternSpec, scalar_matern_kernel
from .model import ResidualDeepGP, build_model, deep_function_sample, elbo, mse, nlpd, predict
from .training import TrainConfig, elbo_gradient, finite_difference_check, train

__all__ = [
    "FramePrior",
    "HodgePrior",
    "HodgeSpec",
    "MaternSpec",
    "ProjectedPrior",
    "RdgpError",
    "ResidualDeepGP",
    "TrainConfig",
    "build_model",
    "deep_function_sample",
    "elbo",
    "elbo_gradient",
    "finite_difference_check",
    "gvf_cov",
    "gvf_features",
    "mse",
    "nlpd",
    "predict",
    "scalar_matern_kernel",
    "train",
]
