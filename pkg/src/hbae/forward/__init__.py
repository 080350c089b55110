"""Forward models: the polynomial pair, the geothermal slice and the external-process adapter."""

from .base import ForwardModel, IdentityModel, ModelFailure
from .external import ExternalModel
from .polynomial import LinearModel, coarse_projection, poly_design_matrix, polynomial_pair
from .slice import SliceConfig, SliceModel, parameter_names

__all__ = [
    "ForwardModel",
    "IdentityModel",
    "ModelFailure",
    "ExternalModel",
    "LinearModel",
    "coarse_projection",
    "poly_design_matrix",
    "polynomial_pair",
    "SliceConfig",
    "SliceModel",
    "parameter_names",
]
