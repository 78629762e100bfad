"""Shared generators and reference implementations used across the test suite."""

from __future__ import annotations

import numpy as np

from relaxbench.network import AffineLayer, InputRegion, Network


def random_network(rng: np.random.Generator, widths, scale: float = 1.0) -> Network:
    """Random dense network with the given layer widths, e.g. [2, 6, 6, 2]."""
    layers = []
    for n_in, n_out in zip(widths, widths[1:]):
        W = rng.normal(0.0, scale / np.sqrt(n_in), size=(n_out, n_in))
        b = rng.normal(0.0, 0.1, size=n_out)
        layers.append(AffineLayer(W, b))
    return Network(layers)


def random_region(rng: np.random.Generator, dim: int, eps: float, clip=None) -> InputRegion:
    center = rng.uniform(-1.0, 1.0, size=dim)
    if clip is not None:
        lo, hi = clip
        center = np.clip(center, lo, hi)
    return InputRegion(center, eps, clip)


def reference_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Element-by-element forward pass kept independent of the library path."""
    values = [float(v) for v in x]
    for k, layer in enumerate(net.layers):
        W, b = layer.weights, layer.bias
        out = []
        for i in range(W.shape[0]):
            acc = float(b[i])
            for j in range(W.shape[1]):
                acc += float(W[i, j]) * values[j]
            out.append(acc)
        if k < len(net.layers) - 1:
            out = [v if v > 0.0 else 0.0 for v in out]
        values = out
    return np.array(values)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function."""
    g = np.zeros_like(x, dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
