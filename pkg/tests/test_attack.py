import numpy as np
import pytest

from relaxbench.attack import AttackConfig, pgd_attack, pgd_margin_upper_bound
from relaxbench.lp import lp_all_bounds
from relaxbench.network import (
    AffineLayer,
    InputRegion,
    Network,
    Specification,
    forward,
    margin_spec,
)
from relaxbench.oracle import exact_min, exhaustive_adversarial_check

from helpers import random_network


def linear_two_class():
    W = np.array([[1.0, -0.5], [-0.3, 0.8]])
    b = np.array([0.1, -0.2])
    return Network([AffineLayer(W, b)])


def analytic_min_distortion(net, x, label):
    W, b = net.layers[0].weights, net.layers[0].bias
    logits = W @ x + b
    best = np.inf
    for j in range(W.shape[0]):
        if j == label:
            continue
        diff = W[label] - W[j]
        best = min(best, (logits[label] - logits[j]) / np.abs(diff).sum())
    return best


def test_linear_classifier_flips_exactly_beyond_analytic_radius():
    net = linear_two_class()
    x = np.array([0.4, 0.2])
    label = int(np.argmax(forward(net, x)))
    eps_star = analytic_min_distortion(net, x, label)
    cfg = AttackConfig(steps=50, restarts=4, seed=3)
    assert pgd_attack(net, InputRegion(x, 0.97 * eps_star), label, cfg) is None
    found = pgd_attack(net, InputRegion(x, 1.05 * eps_star), label, cfg)
    assert found is not None
    assert int(np.argmax(forward(net, found))) != label


def test_zero_radius_finds_nothing():
    rng = np.random.default_rng(1)
    net = random_network(rng, [3, 5, 3])
    x = rng.normal(size=3)
    label = int(np.argmax(forward(net, x)))
    assert pgd_attack(net, InputRegion(x, 0.0), label) is None


def test_attack_matches_oracle_on_tiny_instances():
    rng = np.random.default_rng(5)
    attempted = 0
    succeeded = 0
    trials = 0
    while attempted < 50 and trials < 400:
        trials += 1
        net = random_network(rng, [2, 4, 4, 2], scale=1.4)
        x = rng.uniform(-0.4, 0.4, size=2)
        label = int(np.argmax(forward(net, x)))
        eps = 0.25
        region = InputRegion(x, eps)
        cex = exhaustive_adversarial_check(net, region, label, grid_points=61)
        if cex is None:
            continue
        attempted += 1
        found = pgd_attack(
            net,
            InputRegion(x, 1.2 * eps),
            label,
            AttackConfig(steps=120, restarts=10, seed=attempted),
        )
        if found is not None:
            succeeded += 1
    assert attempted >= 20
    assert succeeded / attempted >= 0.9


def test_returned_points_feasible_and_misclassified():
    rng = np.random.default_rng(9)
    clip = (np.zeros(3), np.ones(3))
    hits = 0
    for k in range(20):
        net = random_network(rng, [3, 5, 3], scale=2.0)
        x = rng.uniform(0.2, 0.8, size=3)
        label = int(np.argmax(forward(net, x)))
        region = InputRegion(x, 0.3, clip=clip)
        found = pgd_attack(net, region, label, AttackConfig(steps=60, restarts=5, seed=k))
        if found is None:
            continue
        hits += 1
        assert np.abs(found - x).max() <= region.epsilon + 1e-12
        assert np.all(found >= clip[0]) and np.all(found <= clip[1])
        assert int(np.argmax(forward(net, found))) != label
    assert hits >= 3


def test_attack_deterministic_for_fixed_seed():
    rng = np.random.default_rng(13)
    net = random_network(rng, [3, 6, 3], scale=2.0)
    x = rng.normal(size=3) * 0.2
    label = int(np.argmax(forward(net, x)))
    region = InputRegion(x, 0.4)
    cfg = AttackConfig(steps=40, restarts=6, seed=42)
    a = pgd_attack(net, region, label, cfg)
    b = pgd_attack(net, region, label, cfg)
    if a is None:
        assert b is None
    else:
        np.testing.assert_array_equal(a, b)
    ua = pgd_margin_upper_bound(net, region, margin_spec(net, label, (label + 1) % 3), cfg)
    ub = pgd_margin_upper_bound(net, region, margin_spec(net, label, (label + 1) % 3), cfg)
    assert ua == ub


def test_margin_upper_bound_exact_for_affine_network():
    net = Network([AffineLayer([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])])
    region = InputRegion([0.0, 0.0], 0.5)
    spec = Specification([2.0, -1.0], 0.1)
    got = pgd_margin_upper_bound(net, region, spec, AttackConfig(steps=100, restarts=3, seed=0))
    assert got == pytest.approx(2.0 * -0.5 + -1.0 * 0.5 + 0.1, abs=1e-9)


def test_margin_upper_bound_sandwiches_exact_min():
    rng = np.random.default_rng(17)
    for k in range(5):
        net = random_network(rng, [2, 4, 4, 2])
        x = rng.uniform(-0.3, 0.3, size=2)
        region = InputRegion(x, 0.3)
        spec = margin_spec(net, 0, 1)
        bounds = lp_all_bounds(net, region, upto=len(net.layers) - 1)
        truth = exact_min(net, region, spec, bounds)
        upper = pgd_margin_upper_bound(net, region, spec, AttackConfig(seed=k))
        assert upper >= truth.value - 1e-7


def test_margin_upper_bound_approaches_abs_minimum():
    net = Network(
        [AffineLayer([[1.0], [-1.0]], [0.0, 0.0]), AffineLayer([[1.0, 1.0]], [0.0])]
    )
    region = InputRegion([0.0], 1.0)
    got = pgd_margin_upper_bound(
        net, region, Specification([1.0, 1.0], 0.0), AttackConfig(steps=200, restarts=8, seed=1)
    )
    assert 0.0 - 1e-12 <= got <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    with pytest.raises(ValueError):
        AttackConfig(restarts=0)
    with pytest.raises(ValueError):
        AttackConfig(step_size=-0.1)
