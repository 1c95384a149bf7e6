"""Distributed power and channel allocation for networks with DF relays.

The package is organised as

``scenario``       network description, YAML loading and validation
``rates``          DT and DF spectral efficiency and derivatives
``local_solvers``  closed-form per-link power and per-node channel solvers
``protocol``       the distributed primal-dual protocol and its diagnostics
``adjustment``     outer projected-subgradient loop over channel budgets
``oracle``         centralized and brute-force reference solvers
``cli``            the ``relayopt`` command-line tool
"""

from .adjustment import (
    AdjustParams,
    AdjustResult,
    EmptyPolytopeError,
    project_onto_B,
    run_algorithm_1,
    step_beta,
)
from .local_solvers import (
    ChannelSolution,
    ChannelSubproblem,
    DfSubproblem,
    DtSubproblem,
    f_core,
    solve_channel_subproblem,
    solve_df_local,
    solve_dt_local,
    solve_rate_root,
)
from .protocol import (
    AlgoParams,
    ProtocolState,
    RunResult,
    Trace,
    check_stationary,
    initial_state,
    run_algorithm_a,
    step_auxiliary,
    step_channel,
    step_dual,
    step_power,
    validate_step_sizes,
)
from .rates import objective, rate_df, rate_dt
from .scenario import (
    Allocation,
    NetworkScenario,
    Polytope,
    ScenarioError,
    compute_s_bound,
    default_scenario_path,
    filter_candidate_relays,
    load_scenario,
    parse_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustParams", "AdjustResult", "EmptyPolytopeError", "project_onto_B",
    "run_algorithm_1", "step_beta",
    "ChannelSolution", "ChannelSubproblem", "DfSubproblem", "DtSubproblem", "f_core",
    "solve_channel_subproblem", "solve_df_local", "solve_dt_local", "solve_rate_root",
    "AlgoParams", "ProtocolState", "RunResult", "Trace", "check_stationary",
    "initial_state", "run_algorithm_a", "step_auxiliary", "step_channel", "step_dual",
    "step_power", "validate_step_sizes",
    "objective", "rate_df", "rate_dt",
    "Allocation", "NetworkScenario", "Polytope", "ScenarioError", "compute_s_bound",
    "default_scenario_path", "filter_candidate_relays", "load_scenario", "parse_scenario",
]
