"""Risk-averse model predictive control with polytopic dynamic risk measures."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .errors import *  # noqa: F401,F403
from .riskcore import (
    CVaR,
    CostTree,
    CustomH,
    CustomV,
    Expectation,
    MeanUpperSemideviation,
    RiskEnvelope,
    WorstCase,
    eval_nested,
    eval_static,
    eval_static_paths,
    family_from_spec,
    make_envelope,
)
from .sysmodel import ScenarioTree, UncertainLinearSystem, build_tree, load_system, make_system, reference_system, step
from .synthesis import TerminalCertificate, random_feasibility_trial, synthesize_terminal, verify_condition9
from .mpc import MpcController, MpcProblem, MpcSolution, assemble_mpc, mpc_policy, solve_mpc
from .stability import check_lyapunov, estimate_decay, risk_of_squared_state
from .harness import ExperimentConfig, RunStats, demo_paradox, run_monte_carlo, summarize
