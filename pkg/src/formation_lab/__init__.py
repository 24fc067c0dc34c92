"""Distance-based formation shape control for double-integrator agents.

Simulation of the relative-position gradient controller and the dithered
distance-only controller, plus numerical certification of their
(practical) exponential stability at desk scale.
"""

from .rigidity import (
    DimensionMismatchError,
    FormationSpec,
    RigidityVerdict,
    UndirectedGraph,
    UnsupportedFrameworkError,
    edge_map,
    is_infinitesimally_rigid,
    is_target_formation,
    rigidity_matrix,
)
from .energy import (
    ChetaevParams,
    EnergyBreakdown,
    SublevelConstants,
    SystemState,
    chetaev_derivative,
    chetaev_value,
    estimate_sublevel_constants,
    find_chetaev_epsilon,
    local_potential,
    potential,
    potential_gradient,
    potential_hessian_apply,
    total_energy,
)
from .controllers import (
    BodyFrames,
    DistanceMeasurements,
    DistanceOnlyConfig,
    GradientControllerConfig,
    NonsmoothPointError,
    control_vector_field,
    distance_only_control,
    dither,
    gradient_control,
    measure_distances,
    symmetric_product_sum,
)
from .dynamics import (
    DecayFit,
    DivergenceError,
    EnergyTrace,
    IntegratorConfig,
    Trajectory,
    energy_trace,
    fit_exponential,
    integrate,
    rhs_averaged,
    rhs_distance_only,
    rhs_gradient,
)
from .averaging import (
    SweepResult,
    check_lemma_energy_bounds,
    check_practical_bound,
    l_transform,
    l_transform_inverse,
    rhs_transformed,
    sweep_omega,
)
from .scenario import Scenario, builtin_scenarios, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BodyFrames",
    "ChetaevParams",
    "DecayFit",
    "DimensionMismatchError",
    "DistanceMeasurements",
    "DistanceOnlyConfig",
    "DivergenceError",
    "EnergyBreakdown",
    "EnergyTrace",
    "FormationSpec",
    "GradientControllerConfig",
    "IntegratorConfig",
    "NonsmoothPointError",
    "RigidityVerdict",
    "Scenario",
    "SublevelConstants",
    "SweepResult",
    "SystemState",
    "Trajectory",
    "UndirectedGraph",
    "UnsupportedFrameworkError",
    "builtin_scenarios",
    "check_lemma_energy_bounds",
    "check_practical_bound",
    "chetaev_derivative",
    "chetaev_value",
    "control_vector_field",
    "distance_only_control",
    "dither",
    "edge_map",
    "energy_trace",
    "estimate_sublevel_constants",
    "find_chetaev_epsilon",
    "fit_exponential",
    "gradient_control",
    "integrate",
    "is_infinitesimally_rigid",
    "is_target_formation",
    "l_transform",
    "l_transform_inverse",
    "load_scenario",
    "local_potential",
    "measure_distances",
    "potential",
    "potential_gradient",
    "potential_hessian_apply",
    "rhs_averaged",
    "rhs_distance_only",
    "rhs_gradient",
    "rhs_transformed",
    "rigidity_matrix",
    "run_scenario",
    "sweep_omega",
    "symmetric_product_sum",
    "total_energy",
]
