"""Constrained RL via regularized saddle-flow dynamics in occupancy-measure space."""

from .cmdp import (
    CmdpModel,
    DualVariables,
    ModelError,
    SlaterCertificate,
    augmented_lagrangian,
    bellman_flow_residual,
    dual_bounds,
    lagrangian,
    load_model,
    occupancy_to_policy,
    policy_to_occupancy,
    projection_radii,
    save_model,
    value_of_occupancy,
)
from .flow import CrlSaddleState, CrlSets, FlowConfig, crl_flow_field, crl_integrate, crl_sets
from .geometry import Box, NonnegL1Ball, Simplex, project
from .lp import (
    CmdpSolution,
    InfeasibleModelError,
    LpSolution,
    LpStatus,
    SlaterConditionError,
    StandardFormLp,
    build_cmdp_lp,
    simplex_solve,
    slater_slack,
    solve_cmdp_exact,
)
from .queue import QueueConfig, TabularGenerativeModel, build_queue_cmdp, queue_generative_model
from .sgda import SgdaState, StepSchedule, estimate_lagrangian, run_sgda, seed_sweep, uniform_xi

__version__ = "0.1.0"
