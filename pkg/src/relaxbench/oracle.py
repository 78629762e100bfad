"""Exact minima on tiny networks by exhaustive activation-pattern enumeration.

Every unstable neuron is fixed to its active or inactive linear piece in
turn; each assignment turns the network into an affine map with linear sign
constraints, so the piece minimum is a small LP.  The global minimum over all
feasible assignments equals the true nonconvex optimum, making this a
ground-truth reference for the relaxed methods at desk scale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from relaxbench.lp import LinearProgram, LpStatus, SolverConfig, solve_lp
from relaxbench.network import (
    InputRegion,
    Network,
    Specification,
    forward,
    margin_spec,
)

__all__ = [
    "OracleRefused",
    "ActivationPattern",
    "ExactMinResult",
    "exact_min",
    "exhaustive_adversarial_check",
]


class OracleRefused(RuntimeError):
    """The instance exceeds the enumeration budget."""

    def __init__(self, unstable_count: int, limit: int):
        super().__init__(
            f"{unstable_count} unstable neurons exceed the enumeration limit {limit}"
        )
        self.unstable_count = unstable_count
        self.limit = limit


@dataclass(frozen=True)
class ActivationPattern:
    """One active/inactive assignment for every unstable neuron; stable
    neurons keep the piece their bounds force."""

    neurons: tuple[tuple[int, int], ...]  # (layer, index) of each unstable neuron
    active: tuple[bool, ...]

    def __post_init__(self):
        if len(self.neurons) != len(self.active):
            raise ValueError("assignment length does not match the unstable neuron count")


@dataclass
class ExactMinResult:
    value: float
    argmin: np.ndarray
    pattern: ActivationPattern
    patterns_enumerated: int
    patterns_feasible: int
    lps_solved: int


def exact_min(
    net: Network,
    region: InputRegion,
    spec: Specification,
    bounds,
    limit: int = 20,
    config: SolverConfig | None = None,
) -> ExactMinResult:
    """Exact minimum of the specification over the region.

    ``bounds`` are sound preactivation boxes for the hidden layers; tighter
    boxes stabilize more neurons and shrink the enumeration.  Raises
    :class:`OracleRefused` when more than ``limit`` neurons are unstable.
    """
    config = config or SolverConfig()
    n_hidden = len(net.layers) - 1
    if len(bounds) < n_hidden:
        raise ValueError(f"need bounds for {n_hidden} hidden layers, got {len(bounds)}")

    unstable = [
        (l, j)
        for l in range(n_hidden)
        for j in range(net.layers[l].out_width)
        if bounds[l].lower[j] < 0.0 < bounds[l].upper[j]
    ]
    if len(unstable) > limit:
        raise OracleRefused(len(unstable), limit)

    if n_hidden == 0:
        lo, hi = region.box()
        x = np.where(spec.c >= 0.0, lo, hi)
        value = float(spec.c @ x + spec.c0)
        pattern = ActivationPattern((), ())
        return ExactMinResult(value, x, pattern, 1, 1, 0)

    # base sign of every hidden neuron: +1 active, -1 inactive, overridden
    # per pattern for the unstable ones
    base_active = [bounds[l].lower >= 0.0 for l in range(n_hidden)]

    incumbent = np.inf
    best_x = None
    best_assign = None
    feasible = 0
    lps = 0

    nominal = _pattern_of(net, region.center, unstable)
    orderings = itertools.chain(
        [nominal],
        (p for p in itertools.product((True, False), repeat=len(unstable)) if p != nominal),
    )
    total_patterns = 2 ** len(unstable)

    for assign in orderings:
        value_bound = _linear_piece_floor(net, region, spec, base_active, unstable, assign)
        if value_bound >= incumbent - 1e-12 and best_x is not None:
            continue  # cannot beat the incumbent even without sign constraints
        lp = _piece_lp(net, region, spec, bounds, base_active, unstable, assign)
        sol = solve_lp(lp, config)
        lps += 1
        if sol.status is LpStatus.INFEASIBLE:
            continue
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"piece LP ended {sol.status.value}")
        feasible += 1
        if sol.value < incumbent:
            incumbent = sol.value
            best_x = sol.x[: region.dim].copy()
            best_assign = assign

    if best_x is None:
        # the nominal input's own pattern is always feasible
        raise RuntimeError("no feasible activation pattern; bounds are unsound")
    pattern = ActivationPattern(tuple(unstable), tuple(best_assign))
    return ExactMinResult(
        float(incumbent), best_x, pattern, total_patterns, feasible, lps
    )


def exhaustive_adversarial_check(
    net: Network,
    region: InputRegion,
    label: int,
    grid_points: int = 41,
    bounds=None,
    limit: int = 20,
    config: SolverConfig | None = None,
) -> np.ndarray | None:
    """Ground-truth counterexample search.

    Dense grid scan for inputs of dimension three or less, otherwise exact
    margin minimization against every other class.  Returns a misclassified
    point inside the region, or None when none exists (up to grid resolution
    in grid mode).
    """
    if int(np.argmax(forward(net, region.center))) != label:
        return region.center.copy()
    if region.dim <= 3:
        lo, hi = region.box()
        axes = [np.linspace(lo[i], hi[i], grid_points) for i in range(region.dim)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.dim)
        for x in grid:
            if int(np.argmax(forward(net, x))) != label:
                return x
        return None

    if bounds is None:
        from relaxbench.lp import lp_all_bounds

        bounds = lp_all_bounds(net, region, config, upto=len(net.layers) - 1)
    for j in range(net.n_outputs):
        if j == label:
            continue
        result = exact_min(net, region, margin_spec(net, label, j), bounds, limit, config)
        if result.value <= 0.0:
            if int(np.argmax(forward(net, result.argmin))) != label:
                return result.argmin
    return None


def _pattern_of(net: Network, x: np.ndarray, unstable) -> tuple[bool, ...]:
    """Activation assignment the network itself takes at x."""
    zs = []
    cur = x
    for layer in net.layers[:-1]:
        z = layer.weights @ cur + layer.bias
        zs.append(z)
        cur = np.maximum(z, 0.0)
    return tuple(bool(zs[l][j] > 0.0) for l, j in unstable)


def _piece_masks(net, base_active, unstable, assign):
    masks = [b.copy() for b in base_active]
    for (l, j), a in zip(unstable, assign):
        masks[l][j] = a
    return masks


def _linear_piece_floor(net, region, spec, base_active, unstable, assign):
    """Minimum of the piece's affine objective over the box alone; a valid
    lower bound on the piece LP since it drops the sign constraints."""
    masks = _piece_masks(net, base_active, unstable, assign)
    c = spec.c.copy()
    offset = float(spec.c0)
    for l in range(len(masks) - 1, -1, -1):
        c = c * masks[l]
        offset += float(c @ net.layers[l].bias)
        c = net.layers[l].weights.T @ c
    lo, hi = region.box()
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    return float(c @ mid - np.abs(c) @ rad + offset)


def _piece_lp(net, region, spec, bounds, base_active, unstable, assign):
    """LP for one linear piece: equality chain through the masked network with
    sign constraints folded into the preactivation boxes."""
    masks = _piece_masks(net, base_active, unstable, assign)
    n_hidden = len(net.layers) - 1
    n0 = region.dim
    widths = [net.layers[l].out_width for l in range(n_hidden)]
    n_vars = n0 + sum(widths)

    lo0, hi0 = region.box()
    lower = [lo0]
    upper = [hi0]
    offsets = [n0]
    for w in widths:
        offsets.append(offsets[-1] + w)

    rows = []
    rhs = []
    for l in range(n_hidden):
        W = net.layers[l].weights
        b = net.layers[l].bias
        w = widths[l]
        z_ofs = offsets[l]
        row_block = np.zeros((w, n_vars))
        row_block[:, z_ofs : z_ofs + w] = np.eye(w)
        if l == 0:
            row_block[:, :n0] = -W
        else:
            prev_ofs = offsets[l - 1]
            row_block[:, prev_ofs : prev_ofs + widths[l - 1]] = -W * masks[l - 1][None, :]
        rows.append(row_block)
        rhs.append(b)
        zl = bounds[l].lower.copy()
        zh = bounds[l].upper.copy()
        zl = np.where(masks[l], np.maximum(zl, 0.0), zl)
        zh = np.where(masks[l], zh, np.minimum(zh, 0.0))
        lower.append(zl)
        upper.append(zh)

    c_obj = np.zeros(n_vars)
    last_ofs = offsets[n_hidden - 1]
    c_obj[last_ofs : last_ofs + widths[-1]] = spec.c * masks[-1]

    lower = np.concatenate(lower)
    upper = np.concatenate(upper)
    if np.any(lower > upper):
        # sign constraint contradicts the box: encode as an infeasible program
        return LinearProgram(
            c_obj,
            spec.c0,
            A_ub=np.zeros((1, n_vars)),
            b_ub=np.array([-1.0]),
        )
    return LinearProgram(
        c_obj,
        spec.c0,
        A_eq=np.vstack(rows),
        b_eq=np.concatenate(rhs),
        lower=lower,
        upper=upper,
    )
