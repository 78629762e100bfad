"""Certification toolkit for feedforward ReLU networks.

Provides interval and greedy linear bound propagation, the exact triangle-LP
relaxation, a PGD attack, an exhaustive small-instance oracle, and
end-to-end verdicts with minimum-distortion search.
"""

from relaxbench.attack import AttackConfig, pgd_attack, pgd_margin_upper_bound
from relaxbench.bounds import (
    LayerBounds,
    ReluRelaxation,
    SlopePolicy,
    greedy_dual_bound,
    greedy_primal_bound,
    interval_bounds,
    propagate_bounds,
    relax_relu,
)
from relaxbench.certify import (
    CERTIFICATION_METHODS,
    SearchTolerances,
    Verdict,
    VerdictStatus,
    eps_search_lower,
    eps_search_upper_pgd,
    percentage_gap,
    robust_error_bounds,
    verify_point,
)
from relaxbench.lp import (
    LinearProgram,
    LpSolution,
    LpStatus,
    SolverConfig,
    build_relaxed_lp,
    lp_all_bounds,
    lp_verify,
    solve_lp,
)
from relaxbench.network import (
    AffineLayer,
    InputRegion,
    Network,
    NetworkFormatError,
    Specification,
    backward,
    forward,
    forward_trace,
    load_network,
    margin_spec,
    save_network,
)
from relaxbench.oracle import OracleRefused, exact_min, exhaustive_adversarial_check

__all__ = [
    "AffineLayer",
    "AttackConfig",
    "CERTIFICATION_METHODS",
    "InputRegion",
    "LayerBounds",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "Network",
    "NetworkFormatError",
    "OracleRefused",
    "ReluRelaxation",
    "SearchTolerances",
    "SlopePolicy",
    "SolverConfig",
    "Specification",
    "Verdict",
    "VerdictStatus",
    "backward",
    "build_relaxed_lp",
    "eps_search_lower",
    "eps_search_upper_pgd",
    "exact_min",
    "exhaustive_adversarial_check",
    "forward",
    "forward_trace",
    "greedy_dual_bound",
    "greedy_primal_bound",
    "interval_bounds",
    "load_network",
    "lp_all_bounds",
    "lp_verify",
    "margin_spec",
    "pgd_attack",
    "pgd_margin_upper_bound",
    "percentage_gap",
    "propagate_bounds",
    "relax_relu",
    "robust_error_bounds",
    "save_network",
    "solve_lp",
    "verify_point",
]

__version__ = "0.1.0"
