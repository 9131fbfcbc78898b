"""Distributed pressure and self-cleaning control of water distribution networks.

The control problem schedules pressure control valve losses and flushing
valve discharges over a horizon of steady-state stages.  Stages are coupled
only through a bound on each junction's pressure range over time, which makes
the problem amenable to consensus ADMM: stage subproblems are solved
independently and a cheap projection restores the coupling.  Two schemes are
provided, a standard consensus ADMM and a two-level method that nests a
three-block ADMM inside an augmented Lagrangian loop.
"""

from .admm import (AdmmResult, ControlProblem, ConsensusState, IterationTrace, StandardConfig,
                   TwoLevelConfig, beta_update, dual_update_y, lambda_update, run_standard,
                   run_two_level, z_update)
from .coupling import coordinate, envelope, node_ranges, project_node_range, project_range, range_violation
from .errors import (InfeasibleToleranceError, NonconvergenceError, ParameterError, ParseError,
                     StructuralError, UnitError, ValidationError, WdnError)
from .fileio import load_network, load_scenario, save_network, save_scenario
from .hydraulics import StageState, Trajectory, check_tolerance, feasible_start, solve_steady
from .network import Bounds, Link, Network, Scenario, build_bounds, headloss, headloss_grad, resistance
from .nlp import SolverOptions, StageProblem, solve_coupled, solve_stage, stage_lagrangian
from .objectives import SccParams, azp, azp_grad, scc, scc_grad, stage_objective, total_objective
from .runner import RunConfig, execute, run, sweep, validate

__version__ = "0.1.0"
