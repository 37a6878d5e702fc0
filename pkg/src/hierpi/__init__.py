"""Hierarchical task-priority control with a Monte-Carlo path-integral layer.

A numpy library for composing prioritized control tasks through
null-space projection, where any one task in the hierarchy can be driven
by a sampling-based path-integral controller instead of its local PD
law. Ships single- and two-unicycle scenario harnesses.
"""

from .errors import (
    BatchFailedError,
    DegenerateWeightsError,
    DimensionMismatchError,
    HierPiError,
    InactiveTaskError,
    NonFiniteError,
    RankDeficientError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .hiercore import (
    ProjectorChain,
    TaskJacobianSet,
    capacity_report,
    compose_flat,
    compose_nested,
    nullspace_projector,
    projector_chain,
    right_pseudoinverse,
)
from .tasklib import (
    PATH_INTEGRAL,
    PD,
    HierarchyLevel,
    ObstacleSpec,
    TaskHierarchy,
    TaskSpec,
    make_centroid_task,
    make_distance_task,
    make_goal_task_single,
    make_obstacle_task_pair,
    make_obstacle_task_single,
    pd_task_control,
)
from .dynsim import (
    DynamicsModel,
    EffectiveDynamics,
    effective_dynamics,
    step_deterministic,
    step_stochastic,
    two_unicycle_model,
    unicycle_model,
)
from .picore import (
    ControlEstimate,
    CostSpec,
    PathIntegralParams,
    RolloutBatch,
    RolloutResult,
    StepDiagnostics,
    cost_to_go,
    estimate_control,
    pi_controller_step,
    sample_rollouts,
)
from .harness import (
    BatchStats,
    Scenario,
    TrajectoryLog,
    export_log,
    export_stats,
    import_log,
    import_stats,
    load_scenario,
    run_batch,
    run_episode,
)

__version__ = "0.1.0"
