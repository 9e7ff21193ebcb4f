import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seascbf import lie
from seascbf.barriers import AffineFacet, LaneBarrier, SlitBarrier
from seascbf.estimation import GaussianBelief, LieBelief, LinearSystem
from seascbf.experiments import default_config, se2_scenario, se3_scenario
from seascbf.filters import (FEASIBILITY_TOL, FilterConfig, FilterStatus, HalfspaceConstraint,
                             InfeasibleError, LieConstraint, beta_schedule, lie_safety_filter,
                             nominal_goto_pose, nominal_goto_position, project_halfspace,
                             sea_ed_linear, sea_pcbf_linear, sea_scbf_linear)
from seascbf.validation import brute_force_projection


# ---------------------------------------------------------------------------
# half-space projection

def test_projection_examples():
    u = project_halfspace(np.array([1.0, 0.0]), HalfspaceConstraint(np.array([0.0, 1.0]), 1.0))
    assert np.array_equal(u, [1.0, 1.0])
    u_nom = np.array([0.3, 2.0])
    assert np.array_equal(project_halfspace(u_nom, HalfspaceConstraint(np.array([0.0, 1.0]), 1.0)),
                          u_nom)


def test_projection_masked_and_infeasible():
    con = HalfspaceConstraint(np.array([1.0, 1.0, 0.0]), 2.0)
    u = project_halfspace(np.array([0.0, 5.0, 3.0]), con, mask=(1,))
    assert u[1] == 0.0 and u[0] == pytest.approx(2.0) and u[2] == 3.0
    with pytest.raises(InfeasibleError):
        project_halfspace(np.zeros(3), HalfspaceConstraint(np.array([0.0, 1.0, 0.0]), 1.0), (1,))
    # satisfied constraints never raise, even without a free direction
    assert np.array_equal(
        project_halfspace(np.zeros(2), HalfspaceConstraint(np.array([0.0, 1.0]), -1.0), (1,)),
        np.zeros(2))


def test_projection_matches_active_set_enumeration(rng):
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 7))
        u_nom, a = rng.normal(size=n), rng.normal(size=n)
        r = float(2.0 * rng.normal())
        mask = tuple(np.flatnonzero(rng.random(n) < 0.2)) if n > 1 else ()
        if np.all(np.delete(a, list(mask)) == 0.0):
            continue
        u = project_halfspace(u_nom, HalfspaceConstraint(a, r), mask)
        ref_obj, _ = brute_force_projection(u_nom, a, r, mask)
        obj = float(np.sum((u - u_nom) ** 2))
        # the oracle's KKT solve rounds like any dense solve, so compare relatively
        worst = max(worst, abs(obj - ref_obj) / (1.0 + ref_obj))
    assert worst < 1e-8


vec = arrays(np.float64, 4, elements=st.floats(-10.0, 10.0))


@settings(max_examples=300, deadline=None)
@given(vec, vec, st.floats(-10.0, 10.0))
def test_projection_feasible_and_idempotent(u_nom, a, r):
    if a @ a < 1e-6:
        return
    con = HalfspaceConstraint(a, r)
    u = project_halfspace(u_nom, con)
    assert a @ u >= r - 1e-12 * max(1.0, abs(r), np.abs(a).sum() * np.abs(u).max())
    assert np.array_equal(project_halfspace(u, HalfspaceConstraint(a, a @ u)), u)
    if a @ u_nom >= r:
        assert np.array_equal(u, u_nom)


# ---------------------------------------------------------------------------
# beta schedule and linear builders

def test_beta_schedule():
    assert beta_schedule(FilterConfig(beta=0.0), 3.0) == 0.0
    cfg = FilterConfig(beta=2.0, beta_rate=7.0)
    assert beta_schedule(cfg, 0.0) == 2.0
    ys = np.linspace(0.0, 5.0, 50)
    vals = [beta_schedule(cfg, y) for y in ys]
    assert np.all(np.diff(vals) < 0.0) and vals[-1] < 1e-14
    # unsafe estimates keep the full coefficient instead of growing without bound
    assert beta_schedule(cfg, -200.0) == 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(alpha=0.0)
    with pytest.raises(ValueError):
        FilterConfig(beta=-1.0)


def integrator(n=2, q=0.01, r=0.04):
    return LinearSystem.integrator(n, 0.1, q * np.eye(n), r * np.eye(n))


def test_scbf_reduces_when_alpha_one():
    sys = integrator()
    f = AffineFacet(np.array([0.0, 1.0]), -0.5)
    b = GaussianBelief(np.array([0.3, 0.2]), np.diag([0.1, 0.2]))
    assert sea_scbf_linear(b, sys, f, FilterConfig(alpha=1.0, beta=0.0)).r == 0.0
    con = sea_scbf_linear(b, sys, f, FilterConfig(alpha=0.9, beta=0.0))
    ref = sea_ed_linear(b, sys, f, FilterConfig(alpha=0.9))
    assert np.array_equal(con.a, ref.a) and con.r == ref.r


def test_scbf_rho_scalar_expansion():
    s1, s2, q = 0.3, 0.4, 0.01
    sys = integrator(q=q)
    f = AffineFacet(np.array([0.0, 1.0]), -0.5)
    b = GaussianBelief(np.array([0.0, 0.0]), np.diag([s1 ** 2, s2 ** 2]))
    cfg = FilterConfig(alpha=1.0, beta=2.0, beta_rate=7.0)
    beta_k = 2.0 * np.exp(-7.0 * 0.5)
    con = sea_scbf_linear(b, sys, f, cfg)
    assert con.r == pytest.approx(beta_k * np.sqrt(s2 ** 2 + q), rel=1e-14)
    assert np.allclose(con.a, sys.B.T @ f.c)


def test_linear_builders_match_definitions(rng):
    for _ in range(50):
        n = 3
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, 2))
        M = rng.normal(size=(n, n))
        sys = LinearSystem(A, B, np.eye(n), 0.1 * np.eye(n), 0.2 * np.eye(n))
        b = GaussianBelief(rng.normal(size=n), M @ M.T)
        f = AffineFacet(rng.normal(size=n), float(rng.normal()))
        cfg = FilterConfig(alpha=float(rng.uniform(0.1, 1.0)), beta=1.5, beta_rate=2.0,
                           pcbf_quantile=3.93)
        Aa = A - cfg.alpha * np.eye(n)
        m = (1 - cfg.alpha) * f.b - f.c @ Aa @ b.mean
        y = f.c @ b.mean - f.b
        rho = 1.5 * np.exp(-2.0 * max(y, 0.0)) * np.sqrt(f.c @ (A @ b.cov @ A.T + sys.process_cov) @ f.c)
        s = 3.93 * np.sqrt(f.c @ (Aa @ b.cov @ Aa.T + sys.process_cov) @ f.c)
        assert sea_ed_linear(b, sys, f, cfg).r == pytest.approx(m, rel=1e-12, abs=1e-12)
        assert sea_scbf_linear(b, sys, f, cfg).r == pytest.approx(m + rho, rel=1e-12, abs=1e-12)
        assert sea_pcbf_linear(b, sys, f, cfg).r == pytest.approx(m + s, rel=1e-12, abs=1e-12)
        ed_cfg = FilterConfig(alpha=cfg.alpha)
        assert sea_pcbf_linear(b, sys, f, ed_cfg).r == sea_ed_linear(b, sys, f, ed_cfg).r


def test_adaptivity_asymmetry(rng):
    sys = integrator(3)
    f = AffineFacet(np.array([0.0, 0.6, 0.8]), -1.0)
    mean = np.array([0.1, 0.2, 0.3])
    Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    scbf, pcbf = FilterConfig(alpha=1.0, beta=3.93), FilterConfig(alpha=1.0, pcbf_quantile=3.93)
    prev = None
    for lam in np.linspace(0.0, 2.0, 21):
        cov = Q @ np.diag([lam, 0.5, 0.1]) @ Q.T
        r = sea_scbf_linear(GaussianBelief(mean, cov), sys, f, scbf).r
        if prev is not None:
            assert r >= prev - 1e-14
        prev = r
        s = sea_pcbf_linear(GaussianBelief(mean, cov), sys, f, pcbf).r
        assert s == pytest.approx(3.93 * np.sqrt(f.c @ sys.process_cov @ f.c), rel=1e-12)


def test_nominal_controllers(rng):
    goal = np.array([12.0, 0.0, 0.0])
    assert np.array_equal(nominal_goto_position(goal, goal), np.zeros(3))
    assert np.array_equal(nominal_goto_position(np.zeros(3), goal), goal)
    g = lie.exp_group(rng.normal(size=6) * 0.5)
    assert np.allclose(nominal_goto_pose(g, g), 0.0, atol=1e-14)
    xi = nominal_goto_pose(np.eye(4), lie.make_pose(p=[1.0, 2.0, 3.0]))
    assert np.allclose(xi, [0, 0, 0, 1, 2, 3], atol=1e-14)
    for _ in range(20):
        mu, goal = lie.exp_group(rng.normal(size=6)), lie.exp_group(rng.normal(size=6))
        xi = nominal_goto_pose(mu, goal)
        assert np.abs(lie.compose(mu, lie.exp_group(xi)) - goal).max() < 1e-9


# ---------------------------------------------------------------------------
# nonlinear filter

def se3_setup():
    scn = se3_scenario(default_config("se3-slit")["scenario"], "sea-scbf")
    return scn, scn.filter, scn.process_cov, scn.dt


def test_lane_far_from_boundary_returns_nominal():
    scn = se2_scenario(default_config("se2-demo")["scenario"], "sea-scbf")
    b = LieBelief(lie.se2_pose(0.0, 3.0, 0.0), 1e-4 * np.eye(3))
    xi = np.array([0.0, 1.0, 0.0])
    out = lie_safety_filter(b, xi, LaneBarrier(), scn.process_cov, scn.dt, scn.filter)
    assert out.status is FilterStatus.NOMINAL and np.array_equal(out.xi, xi)


def test_feasible_nominal_returned_exactly():
    scn, cfg, Q, dt = se3_setup()
    b = LieBelief(np.eye(4), 1e-4 * np.eye(6))
    xi = np.array([0.01, -0.02, 0.03, 0.5, 0.0, 0.0])
    out = lie_safety_filter(b, xi, scn.barrier, Q, dt, cfg)
    assert out.status is FilterStatus.NOMINAL and np.array_equal(out.xi, xi)


def near_slit_instances(n, seed=0):
    rng = np.random.default_rng(seed)
    scn, cfg, Q, dt = se3_setup()
    out = []
    while len(out) < n:
        xi0 = np.r_[0.15 * rng.normal(size=3), rng.uniform(1.4, 2.0), 0.1 * rng.normal(size=2)]
        b = LieBelief(lie.exp_group(xi0), 0.03 ** 2 * np.eye(6))
        xi_nom = nominal_goto_pose(b.mean, scn.goal)
        con = LieConstraint(b, scn.barrier, Q, dt, cfg)
        if float(con(xi_nom)[0]) < 0.0:
            out.append((b, xi_nom, con))
    return out


def test_slit_filter_against_grid_oracle():
    scn, cfg, Q, dt = se3_setup()
    axis = np.linspace(-1.0, 1.0, 21)
    for b, xi_nom, con in near_slit_instances(50):
        res = lie_safety_filter(b, xi_nom, scn.barrier, Q, dt, cfg)
        assert res.feasible and res.constraint >= -FEASIBILITY_TOL
        assert float(con(res.xi)[0]) >= -FEASIBILITY_TOL
        # grid over the translational twist box around the nominal
        span = 1.2 * np.abs(xi_nom[3:]).max() + 1.0
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3) * span
        cand = np.hstack([np.broadcast_to(xi_nom[:3], (len(grid), 3)), xi_nom[3:] + grid])
        ok = con(cand) >= 0.0
        assert ok.any()
        grid_best = np.linalg.norm(cand[ok] - xi_nom, axis=1).min()
        assert np.linalg.norm(res.xi - xi_nom) <= grid_best + 1e-3


def test_lie_filter_deterministic():
    scn, cfg, Q, dt = se3_setup()
    b, xi_nom, _ = near_slit_instances(1, seed=3)[0]
    r1 = lie_safety_filter(b, xi_nom, scn.barrier, Q, dt, cfg)
    r2 = lie_safety_filter(b, xi_nom, scn.barrier, Q, dt, cfg)
    assert np.array_equal(r1.xi, r2.xi) and r1.status == r2.status


def test_pinned_lateral_velocity_stays_zero():
    scn = se2_scenario(default_config("se2-demo")["scenario"], "sea-scbf")
    b = LieBelief(lie.se2_pose(0.0, -1.9, -0.4), 1e-3 * np.eye(3))
    xi = np.array([0.0, 1.0, 0.7])
    out = lie_safety_filter(b, xi, LaneBarrier(), scn.process_cov, scn.dt, scn.filter)
    assert out.xi[2] == 0.0
    assert out.status is not FilterStatus.NOMINAL and out.constraint >= -FEASIBILITY_TOL


def test_unreachable_constraint_flagged_infeasible():
    scn = se2_scenario(default_config("se2-demo")["scenario"], "sea-scbf")
    # every control direction pinned: nothing can repair an unsafe estimate
    cfg = FilterConfig(alpha=0.9, beta=2.0, beta_rate=8.0, curvature=False,
                       equality_mask=(0, 1, 2))
    b = LieBelief(lie.se2_pose(0.0, -2.5, 0.0), 1e-3 * np.eye(3))
    out = lie_safety_filter(b, np.array([0.0, 1.0, 0.0]), LaneBarrier(), scn.process_cov,
                            scn.dt, cfg)
    assert out.status is FilterStatus.INFEASIBLE and not out.feasible
    assert np.array_equal(out.xi, np.zeros(3))
