"""Projected sign-gradient attack: empirical upper bounds on robustness.

The attack ascends the margin of the strongest competing class under an
elementwise sign-gradient step, projecting back onto the region after every
move.  Since the region is a box, the projection is an elementwise clamp.
Results are deterministic for a fixed seed; restarts split the seed by index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relaxbench.network import (
    AffineLayer,
    InputRegion,
    Network,
    Specification,
    backward,
    forward,
)

__all__ = ["AttackConfig", "pgd_attack", "pgd_margin_upper_bound"]


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 100
    step_size: float | None = None  # defaults to epsilon / 10
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step size must be positive")

    def resolved_step(self, epsilon: float) -> float:
        if self.step_size is not None:
            return self.step_size
        return max(epsilon / 10.0, 1e-12)


def pgd_attack(
    net: Network, region: InputRegion, label: int, config: AttackConfig = AttackConfig()
) -> np.ndarray | None:
    """Search the region for a point the network classifies as any class other
    than ``label``.  Returns the first such point found (verified by a fresh
    forward pass), or None."""
    if not (0 <= label < net.n_outputs):
        raise ValueError(f"label {label} out of range for {net.n_outputs} classes")
    step = config.resolved_step(region.epsilon)
    others = [j for j in range(net.n_outputs) if j != label]

    for restart in range(config.restarts):
        rng = np.random.default_rng((config.seed, restart))
        x = region.project(region.sample(rng, 1)[0])
        for _ in range(config.steps):
            logits = forward(net, x)
            if int(np.argmax(logits)) != label:
                return x
            j = others[int(np.argmax(logits[others]))]
            grad_out = np.zeros(net.n_outputs)
            grad_out[j] = 1.0
            grad_out[label] = -1.0
            g = backward(net, x, grad_out)
            x = region.project(x + step * np.sign(g))
        if int(np.argmax(forward(net, x))) != label:
            return x
    return None


def pgd_margin_upper_bound(
    net: Network,
    region: InputRegion,
    spec: Specification,
    config: AttackConfig = AttackConfig(),
) -> float:
    """Empirical minimum of the specification over the region: descend the
    objective with projected sign-gradient steps and keep the smallest value
    visited.  Always an upper bound on the true minimum."""
    head = AffineLayer(spec.c.reshape(1, -1), [spec.c0])
    probe = Network(list(net.layers[:-1]) + [head])
    step = config.resolved_step(region.epsilon)
    one = np.ones(1)

    best = float(forward(probe, region.project(region.center))[0])
    for restart in range(config.restarts):
        rng = np.random.default_rng((config.seed, restart))
        x = region.project(region.sample(rng, 1)[0])
        best = min(best, float(forward(probe, x)[0]))
        for _ in range(config.steps):
            g = backward(probe, x, one)
            x = region.project(x - step * np.sign(g))
            best = min(best, float(forward(probe, x)[0]))
    return best
