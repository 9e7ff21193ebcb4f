import numpy as np
import pytest

from seascbf import lie
from seascbf.estimation import LinearSystem
from seascbf.experiments import (bound_scenario, corridor_scenario, default_config,
                                 se2_scenario)
from seascbf.sim import (Scenario, aggregate, monte_carlo, noise_factor, run_trial, step_lie,
                         step_linear)


def test_step_linear_noise_free():
    sys = LinearSystem.integrator(2, 0.1, np.zeros((2, 2)), np.zeros((2, 2)))
    rng = np.random.default_rng(0)
    x, z = step_linear(np.array([1.0, 2.0]), np.array([3.0, -1.0]), sys, rng)
    assert np.allclose(x, [1.3, 1.9]) and np.array_equal(z, x)


def test_step_linear_process_covariance():
    Q = np.array([[0.04, 0.01], [0.01, 0.09]])
    sys = LinearSystem.integrator(2, 0.1, Q, np.eye(2))
    L = (noise_factor(Q), noise_factor(sys.meas_cov))
    rng = np.random.default_rng(1)
    n = 1_000_000
    W = rng.standard_normal((n, 2)) @ L[0].T
    assert np.abs(np.cov(W.T) - Q).max() < 0.01 * np.abs(Q).max()
    # the stepper draws the same noise in the same order
    rng = np.random.default_rng(1)
    x, _ = step_linear(np.zeros(2), np.zeros(2), sys, rng, L)
    assert np.allclose(x, W[0])


def test_noise_factor_singular():
    cov = np.diag([0.0, 0.25])
    L = noise_factor(cov)
    assert np.allclose(L @ L.T, cov)


def test_step_lie_examples():
    rng = np.random.default_rng(2)
    zero = np.zeros((3, 3))
    g = np.eye(3)
    for k in range(1, 6):
        g, z = step_lie(g, np.array([0.0, 1.0, 0.0]), 0.1, zero, rng, np.zeros((2, 2)),
                        "position")
        assert np.allclose(g, lie.se2_pose(0.1 * k, 0.0, 0.0)) and np.allclose(z, [0.1 * k, 0])
    g0 = lie.exp_group(rng.normal(size=6))
    g1, z = step_lie(g0, np.zeros(6), 0.1, np.zeros((6, 6)), rng, np.zeros((6, 6)))
    assert np.array_equal(g1, g0) and np.allclose(z, g0)


def test_banana_dispersion():
    sc = default_config("se2-demo")["scenario"]
    m = monte_carlo(se2_scenario(sc, "none"), 500, 0)
    E = m.endpoints
    assert E[:, 1].std() > E[:, 0].std()
    assert abs(E[:, 1].mean()) < 3.0 * E[:, 1].std() / np.sqrt(len(E))


def test_unfiltered_trial_follows_nominal():
    sc = default_config("se2-demo")["scenario"]
    scn = se2_scenario(sc, "none").replace(process_cov=np.zeros((3, 3)))
    t = run_trial(scn, 0)
    assert np.allclose(t.states[:, 0, 2], 0.1 * np.arange(scn.horizon + 1))
    assert np.allclose(t.position, [0.1 * scn.horizon, 0.0])
    assert t.solver_flags == {}


def test_trial_is_reproducible():
    sc = default_config("motion-plan")["scenario"]
    scn = corridor_scenario(sc, "sea-scbf", "accurate").replace(horizon=40)
    a, b = run_trial(scn, 7), run_trial(scn, 7)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.barrier, b.barrier)
    c = run_trial(scn, 8)
    assert not np.array_equal(a.states, c.states)


def test_trial_invariants():
    sc = default_config("motion-plan")["scenario"]
    scn = corridor_scenario(sc, "sea-ed", "inaccurate").replace(horizon=60)
    for seed in range(10):
        t = run_trial(scn, seed)
        assert len(t.states) == len(t.means) == len(t.barrier) == 61
        if t.first_exit is None:
            assert t.barrier.min() >= 0.0
        else:
            assert t.barrier[t.first_exit] < 0.0 and np.all(t.barrier[:t.first_exit] >= 0.0)


def test_campaign_metrics():
    sc = default_config("bound-compare")["scenario"]
    scn = bound_scenario(sc, 0.2, 1.0)
    one = monte_carlo(scn, 1, 5, keep_trials=True)
    t = one.trials[0]
    assert one.safety_rate == (0.0 if t.first_exit is not None else 100.0)
    m = monte_carlo(scn, 60, 0)
    assert m.exit_frequency[0] == 0.0
    assert np.all(np.diff(m.exit_frequency) >= 0.0)
    assert m.safety_rate == pytest.approx(100.0 * (1.0 - m.exit_frequency[-1]))
    assert 0.0 <= m.goal_reach <= 100.0
    again = monte_carlo(scn, 60, 0)
    assert np.array_equal(m.exit_frequency, again.exit_frequency)
    assert np.array_equal(m.trace_mean, again.trace_mean)


def test_parallel_matches_serial():
    sc = default_config("bound-compare")["scenario"]
    scn = bound_scenario(sc, 0.2, 2.0).replace(horizon=30)
    a = monte_carlo(scn, 12, 3, threads=1)
    b = monte_carlo(scn, 12, 3, threads=2)
    assert np.array_equal(a.exit_frequency, b.exit_frequency)
    assert np.array_equal(a.endpoints, b.endpoints)


def test_aggregate_empty_exit_curve():
    sc = default_config("bound-compare")["scenario"]
    scn = bound_scenario(sc, 0.05, 1.0).replace(horizon=5)
    trials = [run_trial(scn, s) for s in range(3)]
    m = aggregate(trials, 5)
    assert m.n_trials == 3 and m.exit_frequency.shape == (6,)


def test_scenario_validation():
    sc = default_config("bound-compare")["scenario"]
    scn = bound_scenario(sc, 0.1, 1.0)
    with pytest.raises(ValueError):
        scn.replace(horizon=0)
    with pytest.raises(ValueError):
        scn.replace(dt=0.0)
    with pytest.raises(ValueError):
        scn.replace(method="magic")
    assert isinstance(scn, Scenario)
