"""Array geometry and line-of-sight channel models."""

from .geometry import (ArrayGeometry, aperture, element_position, field_boundaries,
                       fresnel_validity_radius)
from .channel import (FresnelError, LosChannel, SphericalPoint, UserChannelParams, array_response,
                      exact_relative_phase, fresnel_error, fresnel_relative_phase, los_channel,
                      steering_matrix)

__all__ = [
    "ArrayGeometry",
    "aperture",
    "element_position",
    "field_boundaries",
    "fresnel_validity_radius",
    "FresnelError",
    "LosChannel",
    "SphericalPoint",
    "UserChannelParams",
    "array_response",
    "exact_relative_phase",
    "fresnel_error",
    "fresnel_relative_phase",
    "los_channel",
    "steering_matrix",
]
