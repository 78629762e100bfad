"""Feedforward ReLU network data model: layers, input regions, linear objectives.

Networks are a sequence of dense affine layers with a ReLU between every
pair of consecutive layers and none after the last.  All values are immutable
after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetworkFormatError",
    "AffineLayer",
    "Network",
    "InputRegion",
    "Specification",
    "forward",
    "forward_trace",
    "backward",
    "margin_spec",
    "save_network",
    "load_network",
]


class NetworkFormatError(ValueError):
    """A layer, network, or network file is malformed."""


class AffineLayer:
    """Dense affine map ``y = W x + b`` with finite real entries."""

    __slots__ = ("weights", "bias")

    def __init__(self, weights, bias):
        W = np.array(weights, dtype=float)
        b = np.array(bias, dtype=float)
        if W.ndim != 2:
            raise NetworkFormatError(f"weights must be a 2-d matrix, got shape {W.shape}")
        if b.ndim != 1:
            raise NetworkFormatError(f"bias must be a vector, got shape {b.shape}")
        if b.shape[0] != W.shape[0]:
            raise NetworkFormatError(
                f"bias length {b.shape[0]} does not match weight rows {W.shape[0]}"
            )
        if not np.isfinite(W).all() or not np.isfinite(b).all():
            raise NetworkFormatError("layer contains NaN or Inf entries")
        self.weights = W
        self.bias = b

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffineLayer):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )

    def __repr__(self) -> str:
        return f"AffineLayer({self.out_width}x{self.in_width})"


class Network:
    """Stack of affine layers; ReLU after every layer except the last."""

    __slots__ = ("layers",)

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise NetworkFormatError("network must have at least one layer")
        for i, (prev, nxt) in enumerate(zip(layers, layers[1:])):
            if nxt.in_width != prev.out_width:
                raise NetworkFormatError(
                    f"layer {i + 1} expects {nxt.in_width} inputs but layer {i} "
                    f"produces {prev.out_width}"
                )
        self.layers = layers

    @property
    def n_inputs(self) -> int:
        return self.layers[0].in_width

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].out_width

    @property
    def n_hidden_layers(self) -> int:
        """Number of ReLU layers (one less than the number of affine layers)."""
        return len(self.layers) - 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a == b for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        widths = [self.n_inputs] + [layer.out_width for layer in self.layers]
        return "Network(" + "-".join(str(w) for w in widths) + ")"


class InputRegion:
    """An l-inf ball of radius ``epsilon`` around ``center``, optionally
    intersected with an elementwise value box (``clip``)."""

    __slots__ = ("center", "epsilon", "clip")

    def __init__(self, center, epsilon, clip=None):
        c = np.array(center, dtype=float)
        if c.ndim != 1:
            raise ValueError(f"center must be a vector, got shape {c.shape}")
        eps = float(epsilon)
        if not eps >= 0.0:
            raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
        if clip is not None:
            lo = np.array(clip[0], dtype=float)
            hi = np.array(clip[1], dtype=float)
            lo = np.broadcast_to(lo, c.shape).astype(float)
            hi = np.broadcast_to(hi, c.shape).astype(float)
            if np.any(lo > hi):
                raise ValueError("clip lower bound exceeds clip upper bound")
            if np.any(c < lo) or np.any(c > hi):
                raise ValueError("center lies outside the clip box")
            clip = (lo, hi)
        self.center = c
        self.epsilon = eps
        self.clip = clip

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Elementwise bounds of the region (the ball is itself a box)."""
        lo = self.center - self.epsilon
        hi = self.center + self.epsilon
        if self.clip is not None:
            lo = np.maximum(lo, self.clip[0])
            hi = np.minimum(hi, self.clip[1])
        return lo, hi

    def contains(self, x, tol: float = 1e-9) -> bool:
        lo, hi = self.box()
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def project(self, x) -> np.ndarray:
        lo, hi = self.box()
        return np.clip(np.asarray(x, dtype=float), lo, hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform samples from the region box, one per row."""
        lo, hi = self.box()
        return rng.uniform(lo, hi, size=(n, self.dim))

    def with_epsilon(self, epsilon: float) -> "InputRegion":
        return InputRegion(self.center, epsilon, self.clip)


@dataclass(frozen=True)
class Specification:
    """Linear objective ``c . x + c0`` over the last hidden activations.

    A positive minimum over the input region certifies the property the
    coefficients encode (for margin specifications, that one class cannot
    overtake another).
    """

    c: np.ndarray
    c0: float

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "c0", float(self.c0))


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network, returning the logits."""
    x = _check_input(net, x)
    for layer in net.layers[:-1]:
        x = np.maximum(layer.weights @ x + layer.bias, 0.0)
    last = net.layers[-1]
    return last.weights @ x + last.bias


def forward_trace(net: Network, x) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Evaluate the network keeping intermediates.

    Returns ``(preactivations, activations)`` where ``preactivations[l]`` is
    the input to the l-th ReLU (or the logits for the last layer) and
    ``activations[l]`` is the input to affine layer l (``activations[0]`` is
    the network input).
    """
    x = _check_input(net, x)
    activations = [x]
    preactivations = []
    for layer in net.layers:
        z = layer.weights @ activations[-1] + layer.bias
        preactivations.append(z)
        activations.append(np.maximum(z, 0.0))
    activations.pop()  # no ReLU after the last layer
    return preactivations, activations


def backward(net: Network, x, grad_out) -> np.ndarray:
    """Gradient of ``grad_out . f(x)`` with respect to the input.

    The ReLU subgradient at exactly zero is taken to be zero, so the result
    is deterministic everywhere.
    """
    g = np.asarray(grad_out, dtype=float)
    if g.shape != (net.n_outputs,):
        raise ValueError(
            f"grad_out has shape {g.shape}, expected ({net.n_outputs},)"
        )
    preacts, _ = forward_trace(net, x)
    for l in range(len(net.layers) - 1, -1, -1):
        g = net.layers[l].weights.T @ g
        if l > 0:
            g = g * (preacts[l - 1] > 0.0)
    return g


def margin_spec(net: Network, i_star: int, i: int) -> Specification:
    """Objective whose positivity over a region means class ``i`` never
    overtakes class ``i_star``: the logit difference with the final affine
    layer folded into the coefficients."""
    k = net.n_outputs
    if not (0 <= i_star < k) or not (0 <= i < k):
        raise IndexError(f"class index out of range for {k} outputs")
    if i == i_star:
        raise ValueError("margin requires two distinct classes")
    last = net.layers[-1]
    c = last.weights[i_star] - last.weights[i]
    c0 = last.bias[i_star] - last.bias[i]
    return Specification(c, c0)


def save_network(net: Network, path) -> None:
    doc = {
        "layers": [
            {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
            for layer in net.layers
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_network(path) -> Network:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "layers" not in doc:
        raise NetworkFormatError(f"{path}: missing 'layers' key")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict) or "weights" not in entry or "bias" not in entry:
            raise NetworkFormatError(f"{path}: layer {i} missing weights or bias")
        try:
            layers.append(AffineLayer(entry["weights"], entry["bias"]))
        except (NetworkFormatError, ValueError, TypeError) as exc:
            raise NetworkFormatError(f"{path}: layer {i}: {exc}") from exc
    return Network(layers)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (net.n_inputs,):
        raise ValueError(f"input has shape {x.shape}, expected ({net.n_inputs},)")
    return x
