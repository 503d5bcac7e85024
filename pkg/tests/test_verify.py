import numpy as np
import pytest

from gglab import (GameParams, InvalidInputError, ObservationVector, Strategy,
                   ThresholdFunction, best_response_gap, compute_coefficients, fuse_gaussian_observations,
                   nonexistence_witness, simulate_playout, verify_equilibrium)
from gglab.grid import default_grid
from gglab.verify import linear_threshold_function, payoffs, stratified_probes

C2 = compute_coefficients(GameParams(2, 1.0, 9.0))


# -- strategies ----------------------------------------------------------------------------

def test_strategy_validation():
    with pytest.raises(InvalidInputError):
        Strategy("mixed")
    with pytest.raises(InvalidInputError):
        Strategy("linear-threshold")
    with pytest.raises(InvalidInputError):
        best_response_gap(Strategy.linear([1.5]), C2, ObservationVector(0.0, (0.0,)))


def test_too_few_samples_rejected():
    with pytest.raises(InvalidInputError):
        best_response_gap(Strategy.linear([1.5, 1.5]), C2, ObservationVector(0.0, (0.0,)), samples=100)


# -- best response gap -------------------------------------------------------------------

def test_deep_risky_region(n2_reference_solution):
    tf, _, _ = n2_reference_solution
    y = ObservationVector(-20.0, (-20.0,))
    rep = best_response_gap(Strategy.function(tf), C2, y, samples=10**4, seed=1)
    assert rep.action == 1
    assert rep.gap > 10 * rep.mc_stderr and rep.consistent and not rep.indeterminate


def test_rhs_is_exact_posterior():
    rng = np.random.default_rng(3)
    for n in (2, 3, 4):
        params = GameParams(n, 1.7, 0.6)
        c = compute_coefficients(params)
        for _ in range(5):
            y = ObservationVector.from_array(rng.normal(0, 4, n))
            rep = best_response_gap(Strategy.linear([1.5] * n), c, y, samples=10**4, seed=0)
            fused, _ = fuse_gaussian_observations([(y.x_i, 1.7)] + [(v, 2.3) for v in y.shared])
            assert abs(rep.rhs - fused) <= 1e-12 * max(1.0, abs(fused))


@pytest.mark.parametrize("x", [0.5, 1.5, 2.5])
def test_root_of_converged_solution_in_band(n2_reference_solution, x):
    tf, _, _ = n2_reference_solution
    root = float(tf.root_share(np.array([x])))
    rep = best_response_gap(Strategy.function(tf), C2, ObservationVector(x, (root,)), samples=10**5, seed=0)
    assert abs(rep.h_value) <= 1e-12
    assert rep.indeterminate, (rep.gap, rep.mc_stderr)


def test_stderr_halves_variance_when_samples_double(n2_reference_solution):
    tf, _, _ = n2_reference_solution
    probes, near = stratified_probes(tf, 2000, seed=4)
    # saturated probes (peer almost surely risky or safe) do not follow the square-root law
    informative = [p for p, nr in zip(probes, near) if nr and 1.05 < tf.g(p.as_array()[:1]) < 1.95]
    strategy = Strategy.function(tf)
    ratios = []
    for idx, y in enumerate(informative[:50]):
        small = best_response_gap(strategy, C2, y, samples=2 * 10**4, seed=idx)
        large = best_response_gap(strategy, C2, y, samples=4 * 10**4, seed=idx)
        ratios.append(small.mc_stderr / large.mc_stderr)
    assert len(ratios) == 50
    assert np.mean(ratios) == pytest.approx(np.sqrt(2), rel=0.1)


# -- equilibrium verification -----------------------------------------------------------

def test_probes_split_near_and_far(n2_reference_solution):
    tf, _, _ = n2_reference_solution
    probes, near = stratified_probes(tf, 40, seed=0)
    assert len(probes) == 40 and near.sum() == 20
    h = np.array([tf.h_values(p.as_array()) for p in probes])
    assert np.all(np.abs(h[near]) <= 1e-9)
    assert np.all(np.abs(h[~near]) >= 0.05 / C2.b_n - 1e-9)


def test_corrupted_solution_fails(n2_reference_solution):
    tf, _, _ = n2_reference_solution
    g = tf.g
    nodes = g.spec.nodes()[:, 0]
    upper_half = nodes > np.median(nodes)
    bumped = np.clip(g.values + np.where(upper_half, 0.5 * C2.b_n, 0.0), 1.0, 2.0)
    broken = ThresholdFunction(g.with_values(bumped), C2)
    summary = verify_equilibrium(broken, probe_count=60, samples=2 * 10**4, seed=0)
    assert not summary.passed
    bad = [r for r, nr in zip(summary.reports, summary.near_mask) if nr and not r.indeterminate]
    assert bad
    # failures sit where the root was moved, inside the region where the bump is not clipped away
    assert all(r.y_i.x_i > np.median(nodes) - g.spec.spacing()[0] for r in bad)


def test_linear_policy_as_threshold_function_fails():
    tf = linear_threshold_function(C2, 1.5, default_grid(C2))
    summary = verify_equilibrium(tf, probe_count=40, samples=10**4, seed=0)
    assert not summary.passed
    assert summary.near_in_band < summary.near_probes


def test_verification_summary_json():
    tf = linear_threshold_function(C2, 1.5, default_grid(C2))
    d = verify_equilibrium(tf, probe_count=4, samples=10**4, seed=2).to_dict()
    for key in ("probes", "consistent", "indeterminate", "inconsistent", "worst_gap", "seed"):
        assert key in d
    assert d["seed"] == 2 and d["probes"] == 4


# -- non-existence witness --------------------------------------------------------------

def test_witness_two_agents_unit_noise():
    params = GameParams(2, 1.0, 1.0)
    w = nonexistence_witness(params, [1.0, 1.0], eps=0.01, M=1e6)
    assert w.posterior_mean == pytest.approx(0.99, abs=1e-8)
    assert w.mc_peer_risky < 0.01
    assert w.report.lhs <= 1 + 0.01 and w.report.rhs == pytest.approx(0.99, abs=1e-8)
    for cheb, tail in zip(w.chebyshev_bounds, w.gaussian_tail):
        assert tail <= cheb <= 1e-10


def test_mirrored_witness_refutes():
    for n in (2, 3):
        params = GameParams(n, 1.0, 1.0)
        w = nonexistence_witness(params, [1.0] * n, eps=0.01, M=1e6, direction="above")
        assert w.posterior_mean == pytest.approx(1.01, abs=1e-8)
        assert w.report.action == 0
        assert w.report.lhs >= n - (n - 1) * 0.01
        assert w.violated and w.lhs_bound > w.report.rhs


def test_below_witness_refutes_high_threshold():
    params = GameParams(3, 1.0, 1.0)
    w = nonexistence_witness(params, [2.5, 1.2, 2.9], eps=0.01, agent=0)
    assert w.report.action == 1 and w.violated
    assert w.lhs_bound < w.report.rhs == pytest.approx(2.49, abs=1e-8)


def test_degenerate_M_still_solves():
    w = nonexistence_witness(GameParams(2, 1.0, 1.0), [1.5, 1.5], eps=0.01, M=0.0)
    assert w.posterior_mean == pytest.approx(1.49, abs=1e-10)
    assert w.chebyshev_bounds == [1.0]


def test_witness_validation():
    params = GameParams(2, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        nonexistence_witness(params, [1.0])
    with pytest.raises(InvalidInputError):
        nonexistence_witness(params, [1.0, 1.0], eps=0.0)
    with pytest.raises(InvalidInputError):
        nonexistence_witness(params, [1.0, 1.0], direction="sideways")


# -- playouts ----------------------------------------------------------------------------

def test_playout_extremes():
    for n in (2, 4):
        params = GameParams(n, 1.0, 1.0)
        low = simulate_playout(params, Strategy.linear([1.5] * n), -1e6, seed=0)
        assert low.actions == [1] * n and low.payoffs == [n + 1e6] * n
        high = simulate_playout(params, Strategy.linear([1.5] * n), 1e6, seed=0)
        assert high.actions == [0] * n and high.payoffs == [0.0] * n


def test_playout_reproducible(n2_reference_solution):
    tf, _, _ = n2_reference_solution
    strategy = Strategy.function(tf)
    a = simulate_playout(GameParams(2, 1.0, 9.0), strategy, 1.6, seed=11)
    b = simulate_playout(GameParams(2, 1.0, 9.0), strategy, 1.6, seed=11)
    assert a.to_dict() == b.to_dict()


def test_payoff_identity_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(10**5):
        n = int(rng.integers(2, 9))
        actions = [int(v) for v in rng.integers(0, 2, n)]
        theta = float(rng.normal(0, 5))
        pay = payoffs(actions, theta)
        total = sum(actions)
        assert pay == [a * (total - theta) if a else 0.0 for a in actions]


def test_payoff_identity_on_playouts():
    rng = np.random.default_rng(1)
    params = GameParams(3, 1.0, 2.0)
    for seed in range(500):
        theta = float(rng.normal(1.5, 2))
        res = simulate_playout(params, Strategy.linear(rng.uniform(1, 3, 3)), theta, seed=seed)
        total = sum(res.actions)
        for a, p in zip(res.actions, res.payoffs):
            assert p == (a * (total - theta) if a else 0.0)
