"""Triangle-relaxed linear programs and their exact solution.

The relaxation keeps one variable per input coordinate, one per preactivation,
and one per unstable activation; stable neurons are eliminated by substituting
their exact linear value, which keeps the programs small.  The default solver
is the embedded simplex; ``scipy`` (HiGHS) is available behind the same
interface, and any callable meeting the backend contract can be plugged in.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from relaxbench import simplex
from relaxbench.bounds import LayerBounds
from relaxbench.network import InputRegion, Network, Specification, margin_spec

__all__ = [
    "LinearProgram",
    "LpStatus",
    "DualCertificate",
    "LpSolution",
    "SolverConfig",
    "SolverFailure",
    "solve_lp",
    "dual_objective",
    "build_relaxed_lp",
    "build_prefix_lp",
    "lp_all_bounds",
    "lp_verify",
    "LpVerifyResult",
    "write_lp_file",
]

_ACT_TOL = 1e-12  # stability classification, matches the envelope module


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class SolverFailure(RuntimeError):
    """An LP that was expected to solve did not; carries the sub-problem identity."""

    def __init__(self, message, layer=None, neuron=None):
        super().__init__(message)
        self.layer = layer
        self.neuron = neuron


@dataclass
class SolverConfig:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    max_iters: int | None = None
    time_limit: float = 60.0
    backend: str = "simplex"  # "simplex", "scipy", or a callable(lp, config)

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("solver tolerances must be positive")


class LinearProgram:
    """min ``c . x + c0`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``,
    and ``lower <= x <= upper``.

    Inequalities supplied with sense ``>=`` are negated on construction, so
    the stored rows are all ``<=``.
    """

    def __init__(
        self,
        c,
        c0=0.0,
        A_eq=None,
        b_eq=None,
        A_ub=None,
        b_ub=None,
        sense=None,
        lower=None,
        upper=None,
        var_names=None,
    ):
        self.c = np.asarray(c, dtype=float)
        self.c0 = float(c0)
        n = self.c.shape[0]
        self.A_eq = _as_matrix(A_eq, n)
        self.b_eq = _as_vector(b_eq, self.A_eq.shape[0])
        A_ub = _as_matrix(A_ub, n)
        b_ub = _as_vector(b_ub, A_ub.shape[0])
        if sense is not None:
            sense = list(sense)
            if len(sense) != A_ub.shape[0]:
                raise ValueError("sense length does not match inequality rows")
            flip = np.array([s == ">=" for s in sense], dtype=bool)
            if not all(s in ("<=", ">=") for s in sense):
                raise ValueError("sense entries must be '<=' or '>='")
            A_ub = np.where(flip[:, None], -A_ub, A_ub)
            b_ub = np.where(flip, -b_ub, b_ub)
        self.A_ub = A_ub
        self.b_ub = b_ub
        self.sense = ["<="] * A_ub.shape[0]
        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("variable bound vectors must match the variable count")
        if np.any(self.lower > self.upper):
            raise ValueError("variable lower bound exceeds upper bound")
        self.var_names = tuple(var_names) if var_names is not None else None

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    def with_objective(self, c, c0) -> "LinearProgram":
        """Same feasible set, different objective (constraint arrays shared)."""
        lp = LinearProgram.__new__(LinearProgram)
        lp.c = np.asarray(c, dtype=float)
        lp.c0 = float(c0)
        lp.A_eq, lp.b_eq = self.A_eq, self.b_eq
        lp.A_ub, lp.b_ub = self.A_ub, self.b_ub
        lp.sense = self.sense
        lp.lower, lp.upper = self.lower, self.upper
        lp.var_names = self.var_names
        return lp


@dataclass(frozen=True)
class DualCertificate:
    """Multipliers for every constraint of the (sense-normalized) program.

    Conventions for a minimization: ``eq`` is free, ``ineq``, ``lower`` and
    ``upper`` are nonnegative, and stationarity reads
    ``c + A_eq' eq + A_ub' ineq - lower + upper = 0``.
    """

    eq: np.ndarray
    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    value: float | None = None
    x: np.ndarray | None = None
    dual: DualCertificate | None = None
    feasibility_residual: float | None = None
    duality_gap: float | None = None
    iterations: int = 0
    message: str = ""


def dual_objective(lp: LinearProgram, cert: DualCertificate) -> float:
    """Value of the Lagrangian dual at the certificate (a lower bound on the
    optimum whenever the certificate is dual feasible)."""
    g = lp.c0 - lp.b_eq @ cert.eq - lp.b_ub @ cert.ineq
    finite_lo = np.isfinite(lp.lower)
    finite_hi = np.isfinite(lp.upper)
    g += lp.lower[finite_lo] @ cert.lower[finite_lo]
    g -= lp.upper[finite_hi] @ cert.upper[finite_hi]
    return float(g)


def feasibility_residual(lp: LinearProgram, x: np.ndarray) -> float:
    parts = [0.0]
    if lp.A_eq.shape[0]:
        parts.append(float(np.abs(lp.A_eq @ x - lp.b_eq).max()))
    if lp.A_ub.shape[0]:
        parts.append(float(np.maximum(lp.A_ub @ x - lp.b_ub, 0.0).max()))
    parts.append(float(np.maximum(lp.lower - x, 0.0).max(initial=0.0)))
    parts.append(float(np.maximum(x - lp.upper, 0.0).max(initial=0.0)))
    return max(parts)


def solve_lp(lp: LinearProgram, config: SolverConfig | None = None) -> LpSolution:
    """Solve the program; optimal solutions always carry a primal point, a
    dual certificate, and their measured residual and duality gap.  A result
    that fails those checks is reported as a numerical failure, never as a
    silently wrong optimum."""
    config = config or SolverConfig()
    if callable(config.backend):
        raw = config.backend(lp, config)
    elif config.backend == "simplex":
        raw = _solve_simplex(lp, config)
    elif config.backend == "scipy":
        raw = _solve_scipy(lp, config)
    else:
        raise ValueError(f"unknown LP backend {config.backend!r}")
    return _finalize(lp, raw)


def _finalize(lp: LinearProgram, sol: LpSolution) -> LpSolution:
    if sol.status is not LpStatus.OPTIMAL:
        return sol
    sol.feasibility_residual = feasibility_residual(lp, sol.x)
    sol.duality_gap = abs(sol.value - dual_objective(lp, sol.dual))
    if sol.feasibility_residual > 1e-7 or sol.duality_gap > 1e-6 * (1.0 + abs(sol.value)):
        return LpSolution(
            LpStatus.NUMERICAL_FAILURE,
            value=sol.value,
            x=sol.x,
            dual=sol.dual,
            feasibility_residual=sol.feasibility_residual,
            duality_gap=sol.duality_gap,
            iterations=sol.iterations,
            message="optimality checks failed",
        )
    return sol


def _solve_simplex(lp: LinearProgram, config: SolverConfig) -> LpSolution:
    n = lp.n_vars
    me = lp.A_eq.shape[0]
    mi = lp.A_ub.shape[0]
    m = me + mi
    A = np.zeros((m, n + mi))
    b = np.concatenate([lp.b_eq, lp.b_ub])
    if me:
        A[:me, :n] = lp.A_eq
    if mi:
        A[me:, :n] = lp.A_ub
        A[me:, n:] = np.eye(mi)
    lower = np.concatenate([lp.lower, np.zeros(mi)])
    upper = np.concatenate([lp.upper, np.full(mi, np.inf)])
    c = np.concatenate([lp.c, np.zeros(mi)])

    res = simplex.solve_canonical(
        c,
        A,
        b,
        lower,
        upper,
        feas_tol=config.feas_tol,
        opt_tol=min(config.opt_tol, 1e-9),
        max_iters=config.max_iters,
        time_limit=config.time_limit,
    )
    if res.status == "infeasible":
        return LpSolution(LpStatus.INFEASIBLE, iterations=res.iterations)
    if res.status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, iterations=res.iterations)
    if res.status != "optimal":
        return LpSolution(
            LpStatus.NUMERICAL_FAILURE, iterations=res.iterations, message=res.status
        )
    x = res.x[:n]
    reduced = res.reduced_costs[:n]
    cert = DualCertificate(
        eq=-res.y[:me],
        ineq=np.maximum(-res.y[me:], 0.0),
        lower=np.where(np.isfinite(lp.lower), np.maximum(reduced, 0.0), 0.0),
        upper=np.where(np.isfinite(lp.upper), np.maximum(-reduced, 0.0), 0.0),
    )
    return LpSolution(
        LpStatus.OPTIMAL,
        value=float(lp.c @ x + lp.c0),
        x=x,
        dual=cert,
        iterations=res.iterations,
    )


def _solve_scipy(lp: LinearProgram, config: SolverConfig) -> LpSolution:
    from scipy.optimize import linprog

    res = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
        options={"time_limit": config.time_limit},
    )
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    if res.status != 0:
        return LpSolution(LpStatus.NUMERICAL_FAILURE, message=res.message)
    me = lp.A_eq.shape[0]
    mi = lp.A_ub.shape[0]
    cert = DualCertificate(
        eq=-np.asarray(res.eqlin.marginals) if me else np.zeros(0),
        ineq=np.maximum(-np.asarray(res.ineqlin.marginals), 0.0) if mi else np.zeros(0),
        lower=np.maximum(np.asarray(res.lower.marginals), 0.0),
        upper=np.maximum(-np.asarray(res.upper.marginals), 0.0),
    )
    it = int(getattr(res, "nit", 0))
    return LpSolution(
        LpStatus.OPTIMAL,
        value=float(res.fun + lp.c0),
        x=np.asarray(res.x),
        dual=cert,
        iterations=it,
    )


# --------------------------------------------------------------------------
# relaxation construction


_KIND_VAR = 0  # unstable: dedicated activation variable
_KIND_Z = 1  # stable active: activation aliases the preactivation
_KIND_ZERO = 2  # stable inactive


class _PrefixRelaxation:
    """Constraint system of the relaxed network up to activation layer l0.

    Holds the program with a zero objective plus the substitution map for the
    l0-th activations so that callers can instantiate many objectives over one
    feasible set.
    """

    def __init__(self, net: Network, region: InputRegion, bounds, l0: int):
        if len(bounds) < l0:
            raise ValueError(f"need bounds for {l0} layers, got {len(bounds)}")
        self.l0 = l0
        lo0, hi0 = region.box()
        n0 = region.dim

        names: list[str] = [f"x0_{i}" for i in range(n0)]
        lower = [lo0]
        upper = [hi0]
        # substitution map for the activations feeding layer l (kind, column)
        kind = np.zeros(n0, dtype=np.int8)
        col = np.arange(n0)

        # rows are built as (cols, vals, rhs) triples and densified once
        eq_entries: list[tuple[list[int], list[float], float]] = []
        ub_entries: list[tuple[list[int], list[float], float]] = []

        n_total = n0
        for l in range(l0):
            W = net.layers[l].weights
            bvec = net.layers[l].bias
            w = W.shape[0]
            z_cols = np.arange(n_total, n_total + w)
            n_total += w
            names.extend(f"z{l}_{j}" for j in range(w))
            lower.append(bounds[l].lower)
            upper.append(bounds[l].upper)

            # z = W x + b with the previous activations substituted in
            for j in range(w):
                cols = [int(z_cols[j])]
                vals = [1.0]
                for k in range(W.shape[1]):
                    wjk = W[j, k]
                    if wjk == 0.0 or kind[k] == _KIND_ZERO:
                        continue
                    cols.append(int(col[k]))
                    vals.append(-wjk)
                eq_entries.append((cols, vals, float(bvec[j])))

            zl = bounds[l].lower
            zh = bounds[l].upper
            new_kind = np.empty(w, dtype=np.int8)
            new_col = np.zeros(w, dtype=int)
            for j in range(w):
                if zl[j] >= -_ACT_TOL:
                    new_kind[j] = _KIND_Z
                    new_col[j] = z_cols[j]
                elif zh[j] <= _ACT_TOL:
                    new_kind[j] = _KIND_ZERO
                else:
                    new_kind[j] = _KIND_VAR
                    new_col[j] = n_total
                    names.append(f"x{l + 1}_{j}")
                    lower.append(np.array([0.0]))
                    upper.append(np.array([max(zh[j], 0.0)]))
                    n_total += 1
                    xcol = int(new_col[j])
                    zcol = int(z_cols[j])
                    slope = zh[j] / (zh[j] - zl[j])
                    # triangle: x >= 0, x >= z, x <= slope (z - zl)
                    ub_entries.append(([xcol], [-1.0], 0.0))
                    ub_entries.append(([zcol, xcol], [1.0, -1.0], 0.0))
                    ub_entries.append(([xcol, zcol], [1.0, -slope], float(-slope * zl[j])))
            kind, col = new_kind, new_col

        self.n_vars = n_total
        self.kind = kind
        self.col = col
        A_eq = np.zeros((len(eq_entries), n_total))
        b_eq = np.zeros(len(eq_entries))
        for i, (cols, vals, rhs) in enumerate(eq_entries):
            A_eq[i, cols] = vals
            b_eq[i] = rhs
        A_ub = np.zeros((len(ub_entries), n_total))
        b_ub = np.zeros(len(ub_entries))
        for i, (cols, vals, rhs) in enumerate(ub_entries):
            A_ub[i, cols] = vals
            b_ub[i] = rhs
        self.base = LinearProgram(
            np.zeros(n_total),
            0.0,
            A_eq=A_eq,
            b_eq=b_eq,
            A_ub=A_ub,
            b_ub=b_ub,
            lower=np.concatenate(lower),
            upper=np.concatenate(upper),
            var_names=names,
        )

    def lp_for(self, c, c0) -> LinearProgram:
        """Program minimizing ``c . x^(l0) + c0`` over the relaxation."""
        c = np.asarray(c, dtype=float)
        obj = np.zeros(self.n_vars)
        offset = float(c0)
        for j in range(c.shape[0]):
            if c[j] == 0.0 or self.kind[j] == _KIND_ZERO:
                continue
            obj[self.col[j]] += c[j]
        return self.base.with_objective(obj, offset)


def build_prefix_lp(
    net: Network,
    region: InputRegion,
    bounds,
    l0: int,
    c,
    c0: float,
) -> LinearProgram:
    """Triangle-relaxed program for minimizing ``c . x^(l0) + c0``."""
    return _PrefixRelaxation(net, region, bounds, l0).lp_for(c, c0)


def build_relaxed_lp(
    net: Network, region: InputRegion, bounds, spec: Specification
) -> LinearProgram:
    """The relaxation of the full network with the specification objective."""
    return build_prefix_lp(net, region, bounds, len(net.layers) - 1, spec.c, spec.c0)


# --------------------------------------------------------------------------
# drivers


def lp_all_bounds(
    net: Network,
    region: InputRegion,
    config: SolverConfig | None = None,
    *,
    upto: int | None = None,
    jobs: int = 1,
    dump_dir=None,
) -> list[LayerBounds]:
    """Tightest layer-wise boxes the relaxation admits: two exact LPs per
    neuron, layer by layer, reusing the LP-tightened boxes of earlier layers."""
    config = config or SolverConfig()
    if upto is None:
        upto = len(net.layers)
    out: list[LayerBounds] = []
    for l0 in range(upto):
        layer = net.layers[l0]
        w = layer.out_width
        if l0 == 0:
            # the first preactivation is affine over a box: closed form
            lo_box, hi_box = region.box()
            mid = 0.5 * (lo_box + hi_box)
            rad = 0.5 * (hi_box - lo_box)
            center = layer.weights @ mid + layer.bias
            spread = np.abs(layer.weights) @ rad
            out.append(LayerBounds(center - spread, center + spread))
            continue
        system = _PrefixRelaxation(net, region, out, l0)
        tasks = [(j, sign) for j in range(w) for sign in (1.0, -1.0)]
        values = _solve_neuron_tasks(system, layer, tasks, config, jobs, l0, dump_dir)
        lo = np.array([values[(j, 1.0)] for j in range(w)])
        hi = np.array([-values[(j, -1.0)] for j in range(w)])
        out.append(LayerBounds(lo, hi))
    return out


def _neuron_objective(system, layer, j, sign):
    return system.lp_for(sign * layer.weights[j], sign * layer.bias[j])


def _solve_neuron_tasks(system, layer, tasks, config, jobs, l0, dump_dir):
    values = {}
    if jobs <= 1:
        for j, sign in tasks:
            values[(j, sign)] = _solve_one_neuron(system, layer, j, sign, config, l0, dump_dir)
        return values
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=jobs,
        initializer=_pool_init,
        initargs=(system, layer, config, l0, dump_dir),
    ) as pool:
        for (j, sign), value in zip(tasks, pool.map(_pool_solve, tasks, chunksize=4)):
            values[(j, sign)] = value
    return values


def _solve_one_neuron(system, layer, j, sign, config, l0, dump_dir):
    lp = _neuron_objective(system, layer, j, sign)
    if dump_dir is not None:
        tag = "min" if sign > 0 else "max"
        write_lp_file(lp, os.path.join(dump_dir, f"layer{l0}_{j}_{tag}.lp"))
    sol = solve_lp(lp, config)
    if sol.status is not LpStatus.OPTIMAL:
        raise SolverFailure(
            f"bound LP for layer {l0} neuron {j} ended {sol.status.value}",
            layer=l0,
            neuron=j,
        )
    return sol.value


_POOL_CTX: dict = {}


def _pool_init(system, layer, config, l0, dump_dir):
    _POOL_CTX["args"] = (system, layer, config, l0, dump_dir)


def _pool_solve(task):
    system, layer, config, l0, dump_dir = _POOL_CTX["args"]
    j, sign = task
    return _solve_one_neuron(system, layer, j, sign, config, l0, dump_dir)


@dataclass
class LpVerifyResult:
    certified: bool
    margins: dict[int, float] = field(default_factory=dict)


def lp_verify(
    net: Network,
    region: InputRegion,
    label: int,
    bounds,
    config: SolverConfig | None = None,
    *,
    jobs: int = 1,
) -> LpVerifyResult:
    """Exactly solve the relaxed margin problem against every other class.

    Certified means every margin optimum is positive.  A nonpositive optimum
    leaves the point undecided: the relaxation is incomplete, so it does not
    witness a concrete adversarial example.
    """
    config = config or SolverConfig()
    l0 = len(net.layers) - 1
    system = _PrefixRelaxation(net, region, bounds, l0)
    margins: dict[int, float] = {}
    for j in range(net.n_outputs):
        if j == label:
            continue
        spec = margin_spec(net, label, j)
        sol = solve_lp(system.lp_for(spec.c, spec.c0), config)
        if sol.status is not LpStatus.OPTIMAL:
            raise SolverFailure(
                f"margin LP against class {j} ended {sol.status.value}", neuron=j
            )
        margins[j] = sol.value
    return LpVerifyResult(certified=all(v > 0.0 for v in margins.values()), margins=margins)


def write_lp_file(lp: LinearProgram, path) -> None:
    """Write the program in the plain-text LP interchange format; the constant
    objective offset is recorded as a comment since the format has no slot
    for it."""
    names = lp.var_names or tuple(f"x{i}" for i in range(lp.n_vars))

    def expr(row):
        terms = []
        for j in np.flatnonzero(row):
            coef = row[j]
            terms.append(f"{'+' if coef >= 0 else '-'} {abs(coef):.17g} {names[j]}")
        return " ".join(terms) if terms else "0 " + names[0]

    with open(path, "w") as fh:
        fh.write(f"\\ objective offset {lp.c0:.17g}\n")
        fh.write("Minimize\n obj: " + expr(lp.c) + "\n")
        fh.write("Subject To\n")
        for i in range(lp.A_eq.shape[0]):
            fh.write(f" e{i}: " + expr(lp.A_eq[i]) + f" = {lp.b_eq[i]:.17g}\n")
        for i in range(lp.A_ub.shape[0]):
            fh.write(f" c{i}: " + expr(lp.A_ub[i]) + f" <= {lp.b_ub[i]:.17g}\n")
        fh.write("Bounds\n")
        for j, name in enumerate(names):
            lo, hi = lp.lower[j], lp.upper[j]
            lo_s = f"{lo:.17g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.17g}" if np.isfinite(hi) else "+inf"
            fh.write(f" {lo_s} <= {name} <= {hi_s}\n")
        fh.write("End\n")


def _as_matrix(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"constraint matrix shape {A.shape} incompatible with {n} variables")
    return A


def _as_vector(b, m):
    if b is None:
        if m:
            raise ValueError("constraint matrix given without right-hand side")
        return np.zeros(0)
    b = np.asarray(b, dtype=float)
    if b.shape != (m,):
        raise ValueError(f"right-hand side shape {b.shape} does not match {m} rows")
    return b
