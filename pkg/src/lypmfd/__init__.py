"""Center manifolds of ODEs by Lyapunov-Perron fixed-point iteration."""
from .conditions import TrichotomyConstants, SigmaParameters, choose_sigma, delta_phi, derive_trichotomy, gap_report
from .config import build_problem, load_config
from .errors import (
    ConditionError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    EvaluationError,
    IntegrationError,
    LypmfdError,
    NonDifferentiableError,
    ParseError,
    TailError,
    TrichotomyError,
)
from .expr import CutoffSpec, apply_cutoff, compile_vector, differentiate, estimate_lipschitz, evaluate, parse, to_source
from .perron import FixedPointConfig, SolveResult, apply_T, sample_manifold, solve_fixed_point
from .regularity import apply_T1, check_dphi_continuity, check_phi_pair_bound, solve_T1, solve_T1_fixed_point
from .system import NonlinearMap, StateVector, SystemSpec, eval_jacobian, eval_rhs, zero_map
from .trajectory import TimeGrid, Trajectory, sigma_norm
from .validation import ManifoldMap, integrate, invariance_check, ode_residual_check, reduced_dynamics_compare, spotcheck_a2

__version__ = "0.1.0"
