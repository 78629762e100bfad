import numpy as np
import pytest
from scipy.optimize import linprog

from relaxbench.bounds import SlopePolicy, propagate_bounds
from relaxbench.lp import (
    LinearProgram,
    LpStatus,
    SolverConfig,
    SolverFailure,
    build_prefix_lp,
    build_relaxed_lp,
    dual_objective,
    lp_all_bounds,
    lp_verify,
    solve_lp,
    write_lp_file,
)
from relaxbench.network import AffineLayer, InputRegion, Network, Specification

from helpers import random_network, random_region


def assert_certified_optimum(lp, sol):
    assert sol.status is LpStatus.OPTIMAL
    assert sol.feasibility_residual <= 1e-7
    assert sol.duality_gap <= 1e-6 * (1.0 + abs(sol.value))
    # the certificate really is a lower bound
    assert dual_objective(lp, sol.dual) <= sol.value + 1e-6 * (1.0 + abs(sol.value))


def test_min_over_unit_box():
    lp = LinearProgram(c=[1.0], lower=[0.0], upper=[1.0])
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    # the lower box bound carries the multiplier
    assert sol.dual.lower[0] == pytest.approx(1.0, abs=1e-9)


def test_infeasible_pair():
    lp = LinearProgram(
        c=[1.0],
        A_ub=[[1.0], [-1.0]],
        b_ub=[0.0, -1.0],  # x <= 0 and x >= 1
    )
    assert solve_lp(lp).status is LpStatus.INFEASIBLE


def test_unbounded():
    lp = LinearProgram(c=[-1.0], lower=[0.0], upper=[np.inf])
    assert solve_lp(lp).status is LpStatus.UNBOUNDED


def test_sense_normalization():
    lp = LinearProgram(
        c=[1.0],
        A_ub=[[1.0]],
        b_ub=[2.0],
        sense=[">="],  # x >= 2
        lower=[0.0],
        upper=[10.0],
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(2.0, abs=1e-9)


def test_equality_constrained():
    # min x + y subject to x + y = 1 inside the unit box
    lp = LinearProgram(
        c=[1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lower=[0.0, 0.0], upper=[1.0, 1.0]
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(1.0, abs=1e-9)


def test_fixed_variables():
    lp = LinearProgram(
        c=[3.0, -1.0],
        A_eq=[[1.0, 1.0]],
        b_eq=[1.5],
        lower=[0.5, 0.0],
        upper=[0.5, 2.0],
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    np.testing.assert_allclose(sol.x, [0.5, 1.0], atol=1e-9)


def test_free_variable():
    # min y subject to y >= x - 1, y >= -x - 1 with x free
    lp = LinearProgram(
        c=[0.0, 1.0],
        A_ub=[[1.0, -1.0], [-1.0, -1.0]],
        b_ub=[1.0, 1.0],
        lower=[-np.inf, -np.inf],
        upper=[np.inf, np.inf],
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(-1.0, abs=1e-9)


def _random_feasible_lp(rng, n, me, mi):
    x0 = rng.uniform(-1.0, 1.0, size=n)
    lower = x0 - rng.uniform(0.2, 2.0, size=n)
    upper = x0 + rng.uniform(0.2, 2.0, size=n)
    A_eq = rng.normal(size=(me, n))
    b_eq = A_eq @ x0
    A_ub = rng.normal(size=(mi, n))
    b_ub = A_ub @ x0 + rng.uniform(0.0, 1.0, size=mi)
    c = rng.normal(size=n)
    return LinearProgram(
        c, rng.normal(), A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, lower=lower, upper=upper
    )


def _scipy_value(lp):
    res = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
    )
    assert res.status == 0
    return res.fun + lp.c0


def test_random_lps_match_reference_solver():
    rng = np.random.default_rng(101)
    for k in range(20):
        n = int(rng.integers(3, 12))
        me = int(rng.integers(0, max(1, n // 2)))
        mi = int(rng.integers(1, 2 * n))
        lp = _random_feasible_lp(rng, n, me, mi)
        sol = solve_lp(lp)
        assert_certified_optimum(lp, sol)
        want = _scipy_value(lp)
        assert sol.value == pytest.approx(want, rel=1e-6, abs=1e-7), f"case {k}"


def test_degenerate_lp_terminates():
    # many redundant rows through the same vertex
    lp = LinearProgram(
        c=[-1.0, -1.0],
        A_ub=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
        b_ub=[1.0, 1.0, 1.0, 2.0, 2.0],
        lower=[0.0, 0.0],
        upper=[5.0, 5.0],
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(-2.0, abs=1e-9)


def test_scipy_backend_agrees_with_simplex():
    rng = np.random.default_rng(77)
    lp = _random_feasible_lp(rng, 8, 2, 10)
    a = solve_lp(lp, SolverConfig(backend="simplex"))
    b = solve_lp(lp, SolverConfig(backend="scipy"))
    assert_certified_optimum(lp, a)
    assert_certified_optimum(lp, b)
    assert a.value == pytest.approx(b.value, rel=1e-7, abs=1e-8)


def test_custom_backend_seam():
    from relaxbench.lp import _solve_scipy

    def backend(lp, config):
        return _solve_scipy(lp, config)

    lp = LinearProgram(c=[1.0], lower=[-2.0], upper=[3.0])
    sol = solve_lp(lp, SolverConfig(backend=backend))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.value == pytest.approx(-2.0)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(feas_tol=0.0)


# --------------------------------------------------------------------------
# relaxation construction


def one_input_example():
    """1 -> 2 -> 1 network computing relu(x) + relu(-x) = |x|."""
    net = Network(
        [
            AffineLayer([[1.0], [-1.0]], [0.0, 0.0]),
            AffineLayer([[1.0, 1.0]], [0.0]),
        ]
    )
    region = InputRegion([0.0], 1.0)
    return net, region


def test_build_relaxed_lp_shape_on_small_example():
    net, region = one_input_example()
    bounds = propagate_bounds(net, region, "interval", upto=1)
    spec = Specification([1.0, 1.0], 0.0)
    lp = build_relaxed_lp(net, region, bounds, spec)
    assert lp.n_vars == 5  # x0 (1) + z0 (2) + x1 (2)
    assert lp.A_eq.shape[0] == 2
    assert lp.A_ub.shape[0] == 6  # three triangle rows per unstable neuron


def test_relaxed_lp_value_on_small_example():
    net, region = one_input_example()
    bounds = propagate_bounds(net, region, "interval", upto=1)
    lp = build_relaxed_lp(net, region, bounds, Specification([1.0, 1.0], 0.0))
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(0.0, abs=1e-9)
    assert _scipy_value(lp) == pytest.approx(0.0, abs=1e-9)


def test_relaxed_lp_exact_for_stable_network():
    # large positive biases keep all neurons active, so the network is affine
    rng = np.random.default_rng(5)
    net = random_network(rng, [3, 4, 2])
    net = Network(
        [
            AffineLayer(net.layers[0].weights, net.layers[0].bias + 10.0),
            net.layers[1],
        ]
    )
    region = random_region(rng, 3, 0.1)
    bounds = propagate_bounds(net, region, "interval", upto=1)
    assert np.all(bounds[0].lower > 0)
    c = rng.normal(size=4)
    spec = Specification(c, 0.3)
    lp = build_relaxed_lp(net, region, bounds, spec)
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    # closed form through the composed affine map
    W0, b0 = net.layers[0].weights, net.layers[0].bias
    eff_c = W0.T @ c
    eff_b = float(c @ b0 + spec.c0)
    want = eff_c @ region.center - region.epsilon * np.abs(eff_c).sum() + eff_b
    assert sol.value == pytest.approx(want, abs=1e-8)


def test_lp_all_bounds_depth1_equals_interval():
    rng = np.random.default_rng(9)
    net = random_network(rng, [4, 3])
    region = random_region(rng, 4, 0.2)
    from relaxbench.bounds import interval_bounds

    got = lp_all_bounds(net, region)
    want = interval_bounds(net, region)
    np.testing.assert_allclose(got[0].lower, want[0].lower, atol=1e-10)
    np.testing.assert_allclose(got[0].upper, want[0].upper, atol=1e-10)


def test_lp_all_bounds_on_small_example():
    net, region = one_input_example()
    got = lp_all_bounds(net, region)
    np.testing.assert_allclose(got[0].lower, [-1.0, -1.0], atol=1e-9)
    np.testing.assert_allclose(got[0].upper, [1.0, 1.0], atol=1e-9)


def test_lp_all_bounds_contained_in_greedy():
    rng = np.random.default_rng(31)
    net = random_network(rng, [2, 6, 6])
    region = random_region(rng, 2, 0.3)
    lp_b = lp_all_bounds(net, region)
    greedy = propagate_bounds(net, region, "greedy-dual", SlopePolicy.FASTLIN)
    for tight, loose in zip(lp_b, greedy):
        assert np.all(tight.lower >= loose.lower - 1e-7)
        assert np.all(tight.upper <= loose.upper + 1e-7)


def test_lp_all_bounds_parallel_matches_serial():
    rng = np.random.default_rng(41)
    net = random_network(rng, [3, 5, 4])
    region = random_region(rng, 3, 0.2)
    serial = lp_all_bounds(net, region, jobs=1)
    parallel = lp_all_bounds(net, region, jobs=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_allclose(a.lower, b.lower, atol=1e-12)
        np.testing.assert_allclose(a.upper, b.upper, atol=1e-12)


def test_lp_verify_certifies_at_zero_radius():
    rng = np.random.default_rng(55)
    net = random_network(rng, [3, 5, 3])
    x = rng.normal(size=3)
    from relaxbench.network import forward

    label = int(np.argmax(forward(net, x)))
    region = InputRegion(x, 0.0)
    bounds = lp_all_bounds(net, region, upto=len(net.layers) - 1)
    res = lp_verify(net, region, label, bounds)
    assert res.certified
    logits = forward(net, x)
    for j, margin in res.margins.items():
        assert margin == pytest.approx(logits[label] - logits[j], abs=1e-7)


def test_lp_verify_wide_margin_network():
    # logit gap dominates anything the relaxation can lose
    net = Network(
        [
            AffineLayer([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
            AffineLayer([[1.0, 0.0], [0.0, 1.0]], [100.0, 0.0]),
        ]
    )
    region = InputRegion([0.5, 0.5], 0.2)
    bounds = lp_all_bounds(net, region, upto=1)
    res = lp_verify(net, region, 0, bounds)
    assert res.certified


def test_bound_monotonicity_under_box_tightening():
    rng = np.random.default_rng(71)
    net = random_network(rng, [2, 5, 4])
    region = random_region(rng, 2, 0.3)
    tight = lp_all_bounds(net, region, upto=1)
    loose = [type(tight[0])(tight[0].lower - 0.5, tight[0].upper + 0.5)]
    spec = Specification(rng.normal(size=4), 0.0)
    lp_t = build_relaxed_lp(net, region, tight, spec)
    lp_l = build_relaxed_lp(net, region, loose, spec)
    v_t = solve_lp(lp_t).value
    v_l = solve_lp(lp_l).value
    assert v_t >= v_l - 1e-7


def test_write_lp_file_round_trips_through_reference_solver(tmp_path):
    net, region = one_input_example()
    bounds = propagate_bounds(net, region, "interval", upto=1)
    lp = build_relaxed_lp(net, region, bounds, Specification([1.0, 1.0], 0.0))
    path = tmp_path / "probe.lp"
    write_lp_file(lp, path)
    text = path.read_text()
    assert "Minimize" in text and "Subject To" in text and "Bounds" in text
    assert text.count("<=") >= 6


def test_solver_failure_carries_identity():
    failure = SolverFailure("boom", layer=2, neuron=7)
    assert failure.layer == 2 and failure.neuron == 7


def test_build_prefix_lp_mid_layer_objective():
    # minimizing one neuron's preactivation via the prefix relaxation matches
    # the corresponding entry of the full bound sweep
    rng = np.random.default_rng(83)
    net = random_network(rng, [3, 5, 4, 2])
    region = random_region(rng, 3, 0.25)
    all_bounds = lp_all_bounds(net, region)
    layer, j = 1, 2
    lp = build_prefix_lp(
        net, region, all_bounds[:layer], layer,
        net.layers[layer].weights[j], net.layers[layer].bias[j],
    )
    sol = solve_lp(lp)
    assert_certified_optimum(lp, sol)
    assert sol.value == pytest.approx(all_bounds[layer].lower[j], abs=1e-7)


def test_lp_all_bounds_dump_dir(tmp_path):
    rng = np.random.default_rng(89)
    net = random_network(rng, [2, 3, 2])
    region = random_region(rng, 2, 0.2)
    lp_all_bounds(net, region, dump_dir=str(tmp_path))
    files = sorted(p.name for p in tmp_path.glob("*.lp"))
    # two programs per neuron for every layer past the first
    assert files == ["layer1_0_max.lp", "layer1_0_min.lp", "layer1_1_max.lp", "layer1_1_min.lp"]
    assert "Minimize" in (tmp_path / "layer1_0_min.lp").read_text()
