"""Unscented reservoir smoother.

An echo-state reservoir as the evolution model of a nonlinear state-space
model for option-implied volatility, filtered and smoothed with unscented
transforms, with offline generalized-EM and online joint-filtering inference.
"""

from .errors import (ConfigError, ContractError, DataError, DomainError, NumericalError, PropagationError,
                     ShapeError, UrsError)
from .gaussian import Gaussian, JointGaussian, affine_transform, condition, expect_quadratic_form
from .pricing import ObservationBatch, OptionSpec, batch_price, bs_call_price, implied_vol
from .reservoir import InitConfig, ReservoirParams, evolve, init_reservoir, readout, readout_gaussian, \
    spectral_radius
from .ssm import LinearModel, ReservoirModel, forward_filter, k_step_predict, predict, rts_smooth, update
from .unscented import UtConfig, augmented_transform, joint_gaussian_from_two_stage, sigma_points, \
    unscented_transform

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DataError", "DomainError", "NumericalError", "PropagationError",
    "ShapeError", "UrsError", "Gaussian", "JointGaussian", "affine_transform", "condition",
    "expect_quadratic_form", "ObservationBatch", "OptionSpec", "batch_price", "bs_call_price", "implied_vol",
    "InitConfig", "ReservoirParams", "evolve", "init_reservoir", "readout", "readout_gaussian",
    "spectral_radius", "LinearModel", "ReservoirModel", "forward_filter", "k_step_predict", "predict",
    "rts_smooth", "update", "UtConfig", "augmented_transform", "joint_gaussian_from_two_stage",
    "sigma_points", "unscented_transform",
]
