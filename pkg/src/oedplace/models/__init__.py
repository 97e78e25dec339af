from .base import (
    ActionCounter,
    ForwardModel,
    Linearization,
    NoiseModel,
    SensorArray,
    misfit_gradient,
)
from .advection import (
    AdvectionDiffusionModel,
    RecirculatingVelocity,
    capped_bump_parameter,
    load_velocity_csv,
    save_velocity_csv,
)
from .lognormal import LogNormalDiffusionModel
from .matrixfile import MatrixModel

__all__ = [
    "ActionCounter",
    "ForwardModel",
    "Linearization",
    "NoiseModel",
    "SensorArray",
    "misfit_gradient",
    "AdvectionDiffusionModel",
    "RecirculatingVelocity",
    "capped_bump_parameter",
    "load_velocity_csv",
    "save_velocity_csv",
    "LogNormalDiffusionModel",
    "MatrixModel",
]
