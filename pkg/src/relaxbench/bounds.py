"""Preactivation bounds and per-neuron linear ReLU envelopes.

Three bounding engines share this module: plain interval propagation, a
greedy primal pass that substitutes linear envelopes backward layer by layer,
and the equivalent greedy dual pass that propagates multipliers backward.
Each can drive :func:`propagate_bounds`, which solves one sub-problem per
neuron using only bounds already established for earlier layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from relaxbench.network import InputRegion, Network, Specification

__all__ = [
    "SlopePolicy",
    "LayerBounds",
    "ReluRelaxation",
    "BackwardBound",
    "DualVariables",
    "relax_relu",
    "relax_layer",
    "interval_bounds",
    "greedy_primal_bound",
    "backward_envelopes",
    "greedy_dual_bound",
    "greedy_dual_variables",
    "propagate_bounds",
    "BOUND_METHODS",
]

_STABLE_TOL = 1e-12

BOUND_METHODS = ("interval", "greedy-primal", "greedy-dual", "lp")


class SlopePolicy(Enum):
    """Choice of the linear lower envelope slope for unstable neurons."""

    FASTLIN = "fastlin"  # lower slope equals the chord slope
    CROWN_ADAPTIVE = "crown"  # slope 1 when the positive side dominates, else 0
    ZERO = "zero"


@dataclass(frozen=True)
class ReluRelaxation:
    """Linear envelopes ``lower_slope*z + lower_intercept <= relu(z) <=
    upper_slope*z + upper_intercept`` valid on a bounding interval."""

    upper_slope: float
    upper_intercept: float
    lower_slope: float
    lower_intercept: float


class LayerBounds:
    """Sound elementwise bounds on one layer's preactivations."""

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper):
        lo = np.array(lower, dtype=float)
        hi = np.array(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"bound vectors disagree: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi + 1e-9):
            raise ValueError("lower bound exceeds upper bound")
        self.lower = lo
        self.upper = np.maximum(hi, lo)

    @property
    def width(self) -> int:
        return self.lower.shape[0]

    def __repr__(self) -> str:
        return f"LayerBounds(width={self.width})"


@dataclass(frozen=True)
class BackwardBound:
    """Linear envelopes of target quantities with respect to the
    preactivations of an earlier layer: ``A_lower z + b_lower <= target <=
    A_upper z + b_upper`` for every feasible ``z`` of that layer."""

    layer: int
    A_lower: np.ndarray
    b_lower: np.ndarray
    A_upper: np.ndarray
    b_upper: np.ndarray


@dataclass(frozen=True)
class DualVariables:
    """Multipliers produced by the greedy dual pass, one pair per ReLU layer."""

    mu: tuple[np.ndarray, ...]
    lam: tuple[np.ndarray, ...]


def relax_relu(lower: float, upper: float, policy: SlopePolicy) -> ReluRelaxation:
    """Envelopes for a single neuron with preactivation range [lower, upper]."""
    if lower > upper:
        raise ValueError(f"invalid range: lower {lower} > upper {upper}")
    up_a, up_b, lo_a, lo_b = relax_layer(
        np.array([lower], dtype=float), np.array([upper], dtype=float), policy
    )
    return ReluRelaxation(float(up_a[0]), float(up_b[0]), float(lo_a[0]), float(lo_b[0]))


def relax_layer(lower: np.ndarray, upper: np.ndarray, policy: SlopePolicy):
    """Vectorized envelopes: returns (upper_slope, upper_intercept,
    lower_slope, lower_intercept) arrays for a whole layer."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    n = lo.shape[0]
    up_a = np.zeros(n)
    up_b = np.zeros(n)
    lo_a = np.zeros(n)
    lo_b = np.zeros(n)

    degenerate = lo == hi
    active = ~degenerate & (lo >= -_STABLE_TOL)
    inactive = ~degenerate & ~active & (hi <= _STABLE_TOL)
    unstable = ~degenerate & ~active & ~inactive

    # a collapsed interval pins the neuron to the constant relu(lo)
    up_b[degenerate] = np.maximum(lo[degenerate], 0.0)
    lo_b[degenerate] = up_b[degenerate]

    up_a[active] = 1.0
    lo_a[active] = 1.0
    # inactive: all zero already

    l_u = lo[unstable]
    h_u = hi[unstable]
    chord = h_u / (h_u - l_u)
    up_a[unstable] = chord
    up_b[unstable] = -h_u * l_u / (h_u - l_u)
    if policy is SlopePolicy.FASTLIN:
        lo_a[unstable] = chord
    elif policy is SlopePolicy.CROWN_ADAPTIVE:
        lo_a[unstable] = (h_u >= -l_u).astype(float)
    elif policy is SlopePolicy.ZERO:
        pass
    else:
        raise ValueError(f"unknown slope policy {policy!r}")
    return up_a, up_b, lo_a, lo_b


def interval_bounds(net: Network, region: InputRegion, upto: int | None = None) -> list[LayerBounds]:
    """Interval propagation through every affine layer (or the first ``upto``)."""
    if upto is None:
        upto = len(net.layers)
    lo, hi = region.box()
    out: list[LayerBounds] = []
    for layer in net.layers[:upto]:
        mid = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        center = layer.weights @ mid + layer.bias
        spread = np.abs(layer.weights) @ rad
        out.append(LayerBounds(center - spread, center + spread))
        lo = np.maximum(out[-1].lower, 0.0)
        hi = np.maximum(out[-1].upper, 0.0)
    return out


def _concretize(A: np.ndarray, b: np.ndarray, region: InputRegion, side: str) -> np.ndarray:
    """Extreme value of ``A x + b`` over the region, per row."""
    lo, hi = region.box()
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    center = A @ mid + b
    spread = np.abs(A) @ rad
    return center - spread if side == "lower" else center + spread


def _backward_substitute(net, l0, C, c0, bounds, policy, collect=False):
    """Backward envelope substitution for targets ``C x^(l0) + c0``.

    Returns linear bounds on the targets in terms of the network input, and
    optionally the intermediate bounds with respect to each z-layer.
    """
    A_lo = np.array(C, dtype=float)
    A_hi = A_lo.copy()
    b_lo = np.array(c0, dtype=float)
    b_hi = b_lo.copy()
    trace: list[BackwardBound] = []
    for m in range(l0 - 1, -1, -1):
        up_a, up_b, lo_a, lo_b = relax_layer(bounds[m].lower, bounds[m].upper, policy)
        # lower bound of the target: keep the lower envelope where the running
        # coefficient is nonnegative, the upper envelope where it is negative
        pick_lo = A_lo >= 0.0
        b_lo = b_lo + np.sum(A_lo * np.where(pick_lo, lo_b, up_b), axis=1)
        A_lo = A_lo * np.where(pick_lo, lo_a, up_a)
        pick_hi = A_hi >= 0.0
        b_hi = b_hi + np.sum(A_hi * np.where(pick_hi, up_b, lo_b), axis=1)
        A_hi = A_hi * np.where(pick_hi, up_a, lo_a)
        if collect:
            trace.append(BackwardBound(m, A_lo.copy(), b_lo.copy(), A_hi.copy(), b_hi.copy()))
        layer = net.layers[m]
        b_lo = b_lo + A_lo @ layer.bias
        b_hi = b_hi + A_hi @ layer.bias
        A_lo = A_lo @ layer.weights
        A_hi = A_hi @ layer.weights
    return A_lo, b_lo, A_hi, b_hi, trace


def greedy_primal_bound(
    net: Network,
    region: InputRegion,
    l0: int,
    c: np.ndarray,
    c0: float,
    bounds: list[LayerBounds],
    policy: SlopePolicy = SlopePolicy.FASTLIN,
) -> tuple[float, float]:
    """Bounds on ``c . x^(l0) + c0`` where ``x^(l0)`` is the activation vector
    entering affine layer ``l0`` (``x^(0)`` is the input)."""
    _require_bounds(bounds, l0)
    C = np.asarray(c, dtype=float).reshape(1, -1)
    A_lo, b_lo, A_hi, b_hi, _ = _backward_substitute(
        net, l0, C, np.array([float(c0)]), bounds, policy
    )
    lower = _concretize(A_lo, b_lo, region, "lower")
    upper = _concretize(A_hi, b_hi, region, "upper")
    return float(lower[0]), float(upper[0])


def backward_envelopes(
    net: Network,
    l0: int,
    c: np.ndarray,
    c0: float,
    bounds: list[LayerBounds],
    policy: SlopePolicy = SlopePolicy.FASTLIN,
) -> list[BackwardBound]:
    """The per-depth linear envelopes visited by the greedy primal pass."""
    _require_bounds(bounds, l0)
    C = np.asarray(c, dtype=float).reshape(1, -1)
    _, _, _, _, trace = _backward_substitute(
        net, l0, C, np.array([float(c0)]), bounds, policy, collect=True
    )
    return trace


def _greedy_dual_core(net, region, l0, C, c0, bounds, policy):
    """Greedy dual pass for targets ``C x^(l0) + c0`` (one per row of C).

    Returns (lower bounds, mu per layer, lambda per layer).  The multipliers
    are stored column-per-target.
    """
    k = C.shape[0]
    total = np.array(c0, dtype=float).copy()
    mus: list[np.ndarray] = []
    lams: list[np.ndarray] = []
    if l0 == 0:
        lo, hi = region.box()
        mid = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        total = total + C @ mid - np.abs(C) @ rad
        return total, mus, lams

    lam = -C.T  # shape (width of z^(l0-1), k)
    for m in range(l0 - 1, -1, -1):
        up_a, up_b, lo_a, lo_b = relax_layer(bounds[m].lower, bounds[m].upper, policy)
        lam_pos = np.maximum(lam, 0.0)
        lam_neg = np.minimum(lam, 0.0)
        mu = up_a[:, None] * lam_pos + lo_a[:, None] * lam_neg
        total = total - up_b @ lam_pos - lo_b @ lam_neg - net.layers[m].bias @ mu
        mus.append(mu)
        lams.append(lam)
        if m > 0:
            lam = net.layers[m].weights.T @ mu
        else:
            v = -net.layers[0].weights.T @ mu  # (n_inputs, k)
            lo, hi = region.box()
            mid = 0.5 * (lo + hi)
            rad = 0.5 * (hi - lo)
            total = total + mid @ v - rad @ np.abs(v)
    mus.reverse()
    lams.reverse()
    return total, mus, lams


def greedy_dual_bound(
    net: Network,
    region: InputRegion,
    spec: Specification,
    bounds: list[LayerBounds],
    policy: SlopePolicy = SlopePolicy.FASTLIN,
) -> float:
    """Certified lower bound on the specification over the region."""
    value, _ = greedy_dual_variables(net, region, spec, bounds, policy)
    return value


def greedy_dual_variables(
    net: Network,
    region: InputRegion,
    spec: Specification,
    bounds: list[LayerBounds],
    policy: SlopePolicy = SlopePolicy.FASTLIN,
) -> tuple[float, DualVariables]:
    l0 = len(net.layers) - 1
    _require_bounds(bounds, l0)
    C = spec.c.reshape(1, -1)
    vals, mus, lams = _greedy_dual_core(
        net, region, l0, C, np.array([spec.c0]), bounds, policy
    )
    duals = DualVariables(
        mu=tuple(m[:, 0] for m in mus), lam=tuple(l[:, 0] for l in lams)
    )
    return float(vals[0]), duals


def propagate_bounds(
    net: Network,
    region: InputRegion,
    method: str = "greedy-dual",
    policy: SlopePolicy = SlopePolicy.FASTLIN,
    config=None,
    *,
    upto: int | None = None,
    jobs: int = 1,
) -> list[LayerBounds]:
    """Per-layer preactivation bounds by the named method.

    Layers are processed in order; the sub-problems for one layer see only the
    bounds already fixed for earlier layers.  ``method`` is one of
    ``interval``, ``greedy-primal``, ``greedy-dual``, or ``lp`` (exact
    per-neuron optima of the triangle relaxation).
    """
    if method not in BOUND_METHODS:
        raise ValueError(f"unknown bound method {method!r}; expected one of {BOUND_METHODS}")
    if upto is None:
        upto = len(net.layers)
    if method == "interval":
        return interval_bounds(net, region, upto)
    if method == "lp":
        from relaxbench.lp import lp_all_bounds

        return lp_all_bounds(net, region, config, upto=upto, jobs=jobs)

    out: list[LayerBounds] = []
    for l0 in range(upto):
        layer = net.layers[l0]
        if l0 == 0:
            lo = _concretize(layer.weights, layer.bias, region, "lower")
            hi = _concretize(layer.weights, layer.bias, region, "upper")
        elif method == "greedy-primal":
            A_lo, b_lo, A_hi, b_hi, _ = _backward_substitute(
                net, l0, layer.weights, layer.bias, out, policy
            )
            lo = _concretize(A_lo, b_lo, region, "lower")
            hi = _concretize(A_hi, b_hi, region, "upper")
        else:  # greedy-dual
            lo, _, _ = _greedy_dual_core(
                net, region, l0, layer.weights, layer.bias, out, policy
            )
            neg, _, _ = _greedy_dual_core(
                net, region, l0, -layer.weights, -layer.bias, out, policy
            )
            hi = -neg
        out.append(LayerBounds(lo, hi))
    return out


def _require_bounds(bounds, l0):
    if len(bounds) < l0:
        raise ValueError(
            f"need bounds for the {l0} earlier layers, got {len(bounds)}"
        )
