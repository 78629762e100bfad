"""End-to-end verdicts, minimum-distortion search, and robust-error bounds.

Three certification strengths are exposed, ordered weakest to strongest:
``greedy-fastlin`` and ``greedy-crown`` (pure backward bound propagation),
``lp-last`` (greedy intermediate boxes, exact relaxed margin programs), and
``lp-all`` (exact relaxed programs for every neuron and every margin).  All
of them only ever certify; finding concrete counterexamples is the attack's
job, and the two are combined in the robust-error report.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

import numpy as np

from relaxbench.attack import AttackConfig, pgd_attack
from relaxbench.bounds import SlopePolicy, greedy_dual_bound, propagate_bounds
from relaxbench.lp import SolverConfig, SolverFailure, lp_all_bounds, lp_verify
from relaxbench.network import InputRegion, Network, forward, margin_spec

__all__ = [
    "CERTIFICATION_METHODS",
    "VerdictStatus",
    "Verdict",
    "EpsSearchResult",
    "SearchTolerances",
    "verify_point",
    "eps_search_lower",
    "eps_search_upper_pgd",
    "robust_error_bounds",
    "percentage_gap",
    "RobustErrorReport",
    "ReportRow",
    "write_report_csv",
    "write_summary_json",
]

CERTIFICATION_METHODS = ("greedy-fastlin", "greedy-crown", "lp-last", "lp-all")

_GREEDY_POLICY = {
    "greedy-fastlin": SlopePolicy.FASTLIN,
    "greedy-crown": SlopePolicy.CROWN_ADAPTIVE,
}


class VerdictStatus(Enum):
    ROBUST = "robust"
    NOT_ROBUST = "not-robust"
    UNKNOWN = "unknown"


@dataclass
class Verdict:
    status: VerdictStatus
    method: str | None = None
    margins: dict[int, float] | None = None
    counterexample: np.ndarray | None = None

    @property
    def min_margin(self) -> float | None:
        if not self.margins:
            return None
        return min(self.margins.values())


@dataclass
class EpsSearchResult:
    method: str
    eps_lower: float | None = None
    eps_upper: float | None = None
    iterations: int = 0
    trace: list[tuple[float, bool]] = field(default_factory=list)
    counterexample: np.ndarray | None = None


@dataclass(frozen=True)
class SearchTolerances:
    greedy_abs: float = 1e-5  # absolute, cheap methods
    lp_rel: float = 0.05  # relative to the greedy radius, expensive methods
    pgd_abs: float = 1e-5


def verify_point(
    net: Network,
    x_nom,
    label: int,
    eps: float,
    method: str,
    *,
    clip=None,
    config: SolverConfig | None = None,
    jobs: int = 1,
) -> Verdict:
    """Certification verdict for one input at one radius.

    Robust means every margin against every other class has a positive
    certified lower bound.  The incomplete methods never claim NotRobust on
    their own; that verdict appears only when the clean input is already
    misclassified.
    """
    if method not in CERTIFICATION_METHODS:
        raise ValueError(
            f"unknown method {method!r}; expected one of {CERTIFICATION_METHODS}"
        )
    x_nom = np.asarray(x_nom, dtype=float)
    if int(np.argmax(forward(net, x_nom))) != label:
        return Verdict(VerdictStatus.NOT_ROBUST, method, counterexample=x_nom.copy())
    region = InputRegion(x_nom, eps, clip)
    n_hidden = len(net.layers) - 1

    try:
        if method in _GREEDY_POLICY:
            policy = _GREEDY_POLICY[method]
            bounds = propagate_bounds(net, region, "greedy-dual", policy, upto=n_hidden)
            margins = {
                j: greedy_dual_bound(net, region, margin_spec(net, label, j), bounds, policy)
                for j in range(net.n_outputs)
                if j != label
            }
        else:
            if method == "lp-last":
                bounds = propagate_bounds(
                    net, region, "greedy-dual", SlopePolicy.FASTLIN, upto=n_hidden
                )
            else:  # lp-all
                bounds = lp_all_bounds(net, region, config, upto=n_hidden, jobs=jobs)
            margins = lp_verify(net, region, label, bounds, config, jobs=jobs).margins
    except SolverFailure:  # solver trouble surfaces as undecided, not a crash
        return Verdict(VerdictStatus.UNKNOWN, method, margins=None)
    if all(v > 0.0 for v in margins.values()):
        return Verdict(VerdictStatus.ROBUST, method, margins=margins)
    return Verdict(VerdictStatus.UNKNOWN, method, margins=margins)


def _certified(net, x_nom, label, eps, method, clip, config, jobs) -> bool:
    v = verify_point(net, x_nom, label, eps, method, clip=clip, config=config, jobs=jobs)
    return v.status is VerdictStatus.ROBUST


def _initial_guess(x_nom, clip) -> float:
    if clip is not None:
        return 0.05
    scale = float(np.abs(x_nom).max())
    return 0.1 * scale if scale > 0 else 0.05


def _search_cap(x_nom, clip) -> float:
    if clip is not None:
        lo, hi = clip
        return float(np.max(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))
    return 2.0**20 * _initial_guess(x_nom, clip)


def eps_search_lower(
    net: Network,
    x_nom,
    label: int,
    method: str,
    tolerances: SearchTolerances = SearchTolerances(),
    *,
    clip=None,
    config: SolverConfig | None = None,
    jobs: int = 1,
    greedy_result: "EpsSearchResult | None" = None,
) -> EpsSearchResult:
    """Largest certifiable radius by doubling/halving then bisection.

    Greedy methods bisect to an absolute tolerance; the LP methods stop at a
    fraction of the greedy radius (they cost orders of magnitude more per
    query) and may reuse a precomputed greedy search as their starting
    bracket, which is itself re-certified before use.
    """
    x_nom = np.asarray(x_nom, dtype=float)
    if int(np.argmax(forward(net, x_nom))) != label:
        raise ValueError("the nominal input must be correctly classified")

    if method in _GREEDY_POLICY:
        tol = tolerances.greedy_abs
        seed_lo = None
    else:
        if greedy_result is None:
            greedy_result = eps_search_lower(
                net, x_nom, label, "greedy-fastlin", tolerances, clip=clip, config=config
            )
        tol = max(tolerances.lp_rel * greedy_result.eps_lower, 1e-12)
        seed_lo = greedy_result.eps_lower

    trace: list[tuple[float, bool]] = []

    def check(eps: float) -> bool:
        ok = _certified(net, x_nom, label, eps, method, clip, config, jobs)
        trace.append((eps, ok))
        return ok

    cap = _search_cap(x_nom, clip)
    lo, hi = None, None

    if seed_lo is not None and seed_lo > 0 and check(seed_lo):
        lo = seed_lo
    if lo is None:
        guess = _initial_guess(x_nom, clip)
        eps = min(guess, cap)
        if check(eps):
            lo = eps
        else:
            hi = eps
            while eps > 1e-12:
                eps /= 2.0
                if check(eps):
                    lo = eps
                    break
                hi = eps
            if lo is None:
                return EpsSearchResult(method, eps_lower=0.0, iterations=len(trace), trace=trace)
    # doubling phase
    while hi is None:
        if lo >= cap:
            return EpsSearchResult(method, eps_lower=lo, iterations=len(trace), trace=trace)
        eps = min(2.0 * lo, cap)
        if check(eps):
            lo = eps
        else:
            hi = eps
    # bisection phase
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check(mid):
            lo = mid
        else:
            hi = mid
    return EpsSearchResult(method, eps_lower=lo, iterations=len(trace), trace=trace)


def eps_search_upper_pgd(
    net: Network,
    x_nom,
    label: int,
    attack_config: AttackConfig = AttackConfig(),
    tolerance: float = 1e-5,
    *,
    clip=None,
) -> EpsSearchResult:
    """Smallest radius at which the attack succeeds, by the same doubling and
    bisection scheme.  The returned radius always carries a concrete
    misclassified point found at that radius; infinity means the attack never
    succeeded up to the search cap."""
    x_nom = np.asarray(x_nom, dtype=float)
    trace: list[tuple[float, bool]] = []
    best_eps = math.inf
    best_example = None

    if int(np.argmax(forward(net, x_nom))) != label:
        return EpsSearchResult(
            "pgd", eps_upper=0.0, iterations=0, trace=[], counterexample=x_nom.copy()
        )

    def attempt(eps: float) -> bool:
        nonlocal best_eps, best_example
        found = pgd_attack(net, InputRegion(x_nom, eps, clip), label, attack_config)
        trace.append((eps, found is not None))
        if found is not None and eps < best_eps:
            best_eps, best_example = eps, found
        return found is not None

    cap = _search_cap(x_nom, clip)
    guess = min(_initial_guess(x_nom, clip), cap)
    lo, hi = None, None  # lo: failed radius, hi: successful radius
    if attempt(guess):
        hi = guess
        eps = guess
        while eps > tolerance:
            eps /= 2.0
            if attempt(eps):
                hi = eps
            else:
                lo = eps
                break
        if lo is None:
            lo = 0.0
    else:
        lo = guess
        eps = guess
        while True:
            if lo >= cap:
                return EpsSearchResult("pgd", eps_upper=math.inf, iterations=len(trace), trace=trace)
            eps = min(2.0 * eps, cap)
            if attempt(eps):
                hi = eps
                break
            lo = eps
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if attempt(mid):
            hi = mid
        else:
            lo = mid
    return EpsSearchResult(
        "pgd", eps_upper=best_eps, iterations=len(trace), trace=trace, counterexample=best_example
    )


def percentage_gap(eps_pgd: float, eps_lp: float) -> float:
    """Relative shortfall of a certified radius against the attack radius,
    in percent."""
    if not eps_pgd > 0.0:
        raise ValueError(f"attack radius must be positive, got {eps_pgd}")
    return 100.0 * (eps_pgd - eps_lp) / eps_pgd


# --------------------------------------------------------------------------
# dataset-level robust error


@dataclass
class ReportRow:
    sample_id: int
    label: int
    clean_correct: bool
    method: str
    verdict: str
    margin_min: float | None = None
    eps_lower: float | None = None
    eps_upper: float | None = None
    gap_percent: float | None = None
    wall_time_s: float | None = None


CSV_COLUMNS = (
    "sample_id",
    "label",
    "clean_correct",
    "method",
    "verdict",
    "margin_min",
    "eps_lower",
    "eps_upper",
    "gap_percent",
    "wall_time_s",
)


@dataclass
class RobustErrorReport:
    eps: float
    n_samples: int
    clean_error: float
    lower_bound: float
    upper_bounds: dict[str, float]
    rows: list[ReportRow]

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "n_samples": self.n_samples,
            "clean_error": self.clean_error,
            "robust_error_lower_bound": self.lower_bound,
            "robust_error_upper_bounds": dict(self.upper_bounds),
        }


def _evaluate_sample(args):
    net, sample_id, label, x, eps, methods, attack_config, clip, config = args
    rows = []
    clean_correct = int(np.argmax(forward(net, x))) == label
    certified = {}
    for method in methods:
        start = time.perf_counter()
        if clean_correct:
            verdict = verify_point(net, x, label, eps, method, clip=clip, config=config)
        else:
            verdict = Verdict(VerdictStatus.NOT_ROBUST, method, counterexample=x.copy())
        elapsed = time.perf_counter() - start
        certified[method] = verdict.status is VerdictStatus.ROBUST
        rows.append(
            ReportRow(
                sample_id,
                label,
                clean_correct,
                method,
                verdict.status.value,
                margin_min=verdict.min_margin,
                wall_time_s=elapsed,
            )
        )
    attacked = False
    if clean_correct and eps > 0.0:
        start = time.perf_counter()
        found = pgd_attack(net, InputRegion(x, eps, clip), label, attack_config)
        elapsed = time.perf_counter() - start
        attacked = found is not None
        rows.append(
            ReportRow(
                sample_id,
                label,
                clean_correct,
                "pgd",
                "not-robust" if attacked else "unknown",
                wall_time_s=elapsed,
            )
        )
    return sample_id, clean_correct, certified, attacked, rows


def robust_error_bounds(
    net: Network,
    dataset,
    eps: float,
    methods=CERTIFICATION_METHODS,
    attack_config: AttackConfig = AttackConfig(),
    *,
    clip=None,
    config: SolverConfig | None = None,
    jobs: int = 1,
) -> RobustErrorReport:
    """Robust-error interval over a dataset of ``(label, x)`` pairs.

    Each method's upper bound counts the samples it fails to certify
    (misclassified samples count against every method); the lower bound
    counts the samples where the attack exhibits an adversarial example or
    the clean prediction is already wrong.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("dataset is empty")
    methods = tuple(methods)
    for m in methods:
        if m not in CERTIFICATION_METHODS:
            raise ValueError(f"unknown method {m!r}")
    tasks = []
    for sid, (label, x) in enumerate(samples):
        per_sample = AttackConfig(
            steps=attack_config.steps,
            step_size=attack_config.step_size,
            restarts=attack_config.restarts,
            seed=attack_config.seed * 1_000_003 + sid,
        )
        tasks.append(
            (net, sid, int(label), np.asarray(x, dtype=float), eps, methods, per_sample, clip, config)
        )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_sample, tasks, chunksize=1))
    else:
        results = [_evaluate_sample(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    n = len(samples)
    clean_wrong = sum(1 for _, ok, _, _, _ in results if not ok)
    upper = {
        m: sum(1 for _, _, cert, _, _ in results if not cert[m]) / n for m in methods
    }
    lower = sum(1 for _, ok, _, att, _ in results if (not ok) or att) / n
    rows = [row for r in results for row in r[4]]
    return RobustErrorReport(
        eps=eps,
        n_samples=n,
        clean_error=clean_wrong / n,
        lower_bound=lower,
        upper_bounds=upper,
        rows=rows,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return format(value, ".12g")
    return str(value)


def write_report_csv(rows, path_or_file, *, timestamp: bool = True) -> None:
    """Rows in a fixed column order; a comment header carries the only
    run-varying metadata besides measured wall times."""

    def emit(fh):
        if timestamp:
            fh.write(f"# generated {datetime.now(timezone.utc).isoformat()}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def read_report_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
