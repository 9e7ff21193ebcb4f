"""Self-contained numerical oracle checks used by ``seascbf validate``.

Each check returns ``(passed, detail)``.  All randomness is seeded.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from . import lie
from .barriers import GRAD_STEP, SlitBarrier, expected_barrier, lie_gradient
from .estimation import LieBelief, empirical_moments, lie_predict
from .filters import HalfspaceConstraint, project_halfspace


def brute_force_projection(u_nom, a, r, mask=()):
    """Minimise ||u - u_nom||^2 s.t. a^T u >= r, u[mask] = 0 by enumerating active sets.

    Each active set gives an equality-constrained QP solved through its KKT
    system; the best feasible candidate wins.
    """
    n = len(u_nom)
    E = np.eye(n)[list(mask)] if len(mask) else np.zeros((0, n))
    best = None
    for active in (False, True):
        A = np.vstack([E, a[None]]) if active else E
        m = A.shape[0]
        K = np.block([[2.0 * np.eye(n), A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([2.0 * u_nom, np.zeros(len(mask)), [r] if active else []])
        try:
            u = np.linalg.solve(K, rhs)[:n]
        except np.linalg.LinAlgError:
            continue
        if a @ u >= r - 1e-9 * (1.0 + abs(r)):
            obj = float(np.sum((u - u_nom) ** 2))
            if best is None or obj < best[0]:
                best = (obj, u)
    return best


def check_projection(n_instances=2000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 7))
        u_nom, a = rng.normal(size=n), rng.normal(size=n)
        r = float(rng.normal() * 2.0)
        mask = tuple(np.flatnonzero(rng.random(n) < 0.2)) if n > 1 else ()
        if np.all(np.delete(a, list(mask)) == 0.0):
            continue
        u = project_halfspace(u_nom, HalfspaceConstraint(a, r), mask)
        ref = brute_force_projection(u_nom, a, r, mask)
        worst = max(worst, abs(float(np.sum((u - u_nom) ** 2)) - ref[0]))
    return worst < 1e-8, f"max objective gap {worst:.2e}"


def check_exp_log(n_samples=500, seed=1):
    rng = np.random.default_rng(seed)
    worst_exp = worst_rt = 0.0
    for _ in range(n_samples):
        for d in (3, 6):
            xi = rng.normal(size=d)
            rot = slice(0, 1) if d == 3 else slice(0, 3)
            theta = np.linalg.norm(xi[rot])
            if theta >= np.pi - 1e-3:
                xi[rot] *= rng.uniform(0.0, np.pi - 1e-3) / theta
            g = lie.exp_group(xi)
            worst_exp = max(worst_exp, np.abs(g - scipy.linalg.expm(lie.twist_hat(xi))).max())
            worst_rt = max(worst_rt, np.abs(lie.log_group(g) - xi).max())
    ok = worst_exp < 1e-10 and worst_rt < 1e-10
    return ok, f"exp vs expm {worst_exp:.1e}, roundtrip {worst_rt:.1e}"


def bch_slope(seed=2, scales=np.logspace(-2.5, -1.0, 7)):
    """Slope of log BCH truncation error against log twist scale."""
    rng = np.random.default_rng(seed)
    xi, zeta = rng.normal(size=6), rng.normal(size=6)
    errs = []
    for s in scales:
        exact = lie.log_group(lie.compose(lie.exp_group(s * xi), lie.exp_group(s * zeta)))
        errs.append(np.linalg.norm(lie.bch_truncated(s * xi, s * zeta) - exact))
    return float(np.polyfit(np.log(scales), np.log(errs), 1)[0])


def check_bch():
    slope = bch_slope()
    return slope >= 3.7, f"error slope {slope:.2f}"


def check_richardson(step=GRAD_STEP, seed=3):
    """Halving the gradient step must not move the slit gradient."""
    rng = np.random.default_rng(seed)
    h = SlitBarrier()
    worst = 0.0
    for _ in range(20):
        g = lie.exp_group(rng.normal(size=6) * np.r_[0.3, 0.3, 0.3, 0.5, 0.2, 0.2]
                          + np.r_[0, 0, 0, 2.0, 0, 0])
        g1, g2 = lie_gradient(h, g, step), lie_gradient(h, g, step / 2.0)
        worst = max(worst, np.abs(g1 - g2).max() / max(1.0, np.abs(g2).max()))
    return worst < 1e-6, f"relative change {worst:.1e} at step {step:g}"


def check_moments(n_samples=100_000, seed=4):
    """Lie prediction covariance and curvature-corrected mean vs sampling."""
    rng = np.random.default_rng(seed)
    cov0 = 0.05 ** 2 * np.eye(6)
    belief = LieBelief(lie.exp_group(np.r_[0.1, -0.2, 0.3, 1.0, 0.5, -0.2]), cov0)
    U = lie.exp_group(np.r_[0.05, 0.0, 0.1, 0.1, 0.0, 0.0])
    Q = 0.05 ** 2 * np.eye(6)
    pred = lie_predict(belief, U, Q)
    L0, Lq = np.linalg.cholesky(cov0), np.linalg.cholesky(Q)
    G = lie.compose(lie.compose(belief.mean[None], lie.exp_group(rng.normal(size=(n_samples, 6)) @ L0.T)),
                    lie.compose(U[None], lie.exp_group(rng.normal(size=(n_samples, 6)) @ Lq.T)))
    emp = empirical_moments(G)
    rel = np.abs(np.diag(emp.cov) / np.diag(pred.cov) - 1.0).max()

    h = SlitBarrier()
    # initial pose of the slit scenario
    b = LieBelief(np.eye(4), 0.05 ** 2 * np.eye(6))
    samples = h(lie.compose(b.mean[None], lie.exp_group(rng.normal(size=(n_samples, 6)) * 0.05)))
    se = samples.std() / np.sqrt(n_samples)
    z = abs(expected_barrier(h, b, True) - samples.mean()) / se
    ok = rel < 0.05 and z < 3.0
    return ok, f"covariance rel. error {rel:.3f}, barrier mean {z:.2f} SE"


CHECKS = {
    "qp-bruteforce": check_projection,
    "exp-log-series": check_exp_log,
    "bch-order": check_bch,
    "gradient-richardson": check_richardson,
    "moment-sampling": check_moments,
}


def run_validation(grad_step=GRAD_STEP):
    out = {}
    for name, fn in CHECKS.items():
        out[name] = fn(grad_step) if name == "gradient-richardson" else fn()
    return out
