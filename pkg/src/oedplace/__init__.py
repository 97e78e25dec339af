"""Optimal sensor placement for PDE-governed Bayesian inverse problems.

The package splits the work into an *offline* stage that touches the forward
model (prior sampling, MAP estimation, randomized low-rank compression of the
whitened data-space Hessian) and an *online* stage that searches over
candidate sensor subsets using only the compressed surrogates - greedy and
exchange searches whose per-candidate cost is a bordered Cholesky update,
with brute-force, closed-form and nested Monte Carlo validators at small
scale.
"""

from .backend import BACKEND, available_backends, get_kernels
from .config import RunConfig, load_config
from .criteria import (
    Design,
    EIGResult,
    TrainingSample,
    gain_gap_bound,
    information_gain_exact,
    information_gain_lowrank,
    laplace_information_gain,
    nested_mc_information_gain,
    posterior_pointwise_variance,
    restricted_eigenvalues,
)
from .errors import CapabilityError, NumericalError, StateError, ValidationError
from .lowrank import (
    LowRankHessian,
    build_data_hessian_lowrank,
    data_hessian_action,
    randomized_eigendecomposition,
)
from .mapsolver import MapResult, NewtonSettings, find_map, gauss_newton_hessian_action
from .mesh import (
    Grid2D,
    advection_matrix,
    boundary_mass_matrix,
    lumped_mass_diagonal,
    mass_matrix,
    stiffness_matrix,
)
from .models import (
    ActionCounter,
    AdvectionDiffusionModel,
    ForwardModel,
    Linearization,
    LogNormalDiffusionModel,
    MatrixModel,
    NoiseModel,
    RecirculatingVelocity,
    SensorArray,
    capped_bump_parameter,
    misfit_gradient,
)
from .pipeline import (
    EvaluateResult,
    OfflineArtifacts,
    Problem,
    RunReport,
    build_problem,
    load_artifacts,
    run_evaluate,
    run_offline,
    run_online,
)
from .prior import DensePrior, PriorOperator, build_prior, rotated_anisotropy
from .selection import (
    CallableCriterion,
    LowRankGainCriterion,
    SampleAverageGainCriterion,
    SelectionTrace,
    brute_force_search,
    leverage_scores,
    random_designs,
    standard_greedy,
    swapping_greedy,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # backend
    "BACKEND",
    "available_backends",
    "get_kernels",
    # errors
    "ValidationError",
    "StateError",
    "CapabilityError",
    "NumericalError",
    # mesh
    "Grid2D",
    "mass_matrix",
    "stiffness_matrix",
    "boundary_mass_matrix",
    "advection_matrix",
    "lumped_mass_diagonal",
    # prior
    "PriorOperator",
    "DensePrior",
    "build_prior",
    "rotated_anisotropy",
    # models
    "ActionCounter",
    "SensorArray",
    "NoiseModel",
    "ForwardModel",
    "Linearization",
    "AdvectionDiffusionModel",
    "RecirculatingVelocity",
    "capped_bump_parameter",
    "LogNormalDiffusionModel",
    "MatrixModel",
    "misfit_gradient",
    # low-rank
    "LowRankHessian",
    "randomized_eigendecomposition",
    "data_hessian_action",
    "build_data_hessian_lowrank",
    # criteria
    "Design",
    "TrainingSample",
    "EIGResult",
    "information_gain_lowrank",
    "information_gain_exact",
    "gain_gap_bound",
    "restricted_eigenvalues",
    "laplace_information_gain",
    "nested_mc_information_gain",
    "posterior_pointwise_variance",
    # MAP solver
    "NewtonSettings",
    "MapResult",
    "find_map",
    "gauss_newton_hessian_action",
    # selection
    "LowRankGainCriterion",
    "SampleAverageGainCriterion",
    "CallableCriterion",
    "SelectionTrace",
    "leverage_scores",
    "standard_greedy",
    "swapping_greedy",
    "brute_force_search",
    "random_designs",
    # config + pipeline
    "RunConfig",
    "load_config",
    "Problem",
    "OfflineArtifacts",
    "RunReport",
    "EvaluateResult",
    "build_problem",
    "run_offline",
    "run_online",
    "run_evaluate",
    "load_artifacts",
]
