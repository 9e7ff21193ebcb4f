"""Matrix Lie group primitives for SO(3), SE(2) and SE(3).

Conventions
-----------
* Group elements are homogeneous matrices, ``3x3`` for SE(2) and ``4x4``
  for SE(3).
* SE(3) twists are ordered rotation first, ``(w1, w2, w3, v1, v2, v3)``.
* SE(2) twists are ordered ``(w, vx, vy)`` (see ``SE2_TWIST_ORDER``).
* Everything is left-invariant: perturbations act on the right,
  ``g @ exp_group(xi)``.

Most functions accept stacked inputs with arbitrary leading dimensions so
that barrier derivatives and Monte Carlo moments can be evaluated in one
vectorised call.
"""
from __future__ import annotations

import numpy as np

SE2_TWIST_ORDER = ("omega", "v_x", "v_y")
SE3_TWIST_ORDER = ("omega_1", "omega_2", "omega_3", "v_1", "v_2", "v_3")

# Below this rotation angle the trigonometric coefficients are replaced by
# their Taylor series (through theta^4); truncation error < 1e-19 here.
SMALL_ANGLE = 1e-3
# Principal branch guard for the logarithm.
BRANCH_MARGIN = 1e-6


class BranchError(ValueError):
    """Raised when the principal logarithm is not unique (angle near pi)."""


def skew(w):
    """so(3) hat map; works on ``(..., 3)`` arrays."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def unskew(W):
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def hat(v):
    """Map a 3-vector to so(3) or a 6-vector twist to se(3).

    SE(2) twists also have three entries; use :func:`hat_se2` for those.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 3:
        return skew(v)
    if v.shape[-1] == 6:
        out = np.zeros(v.shape[:-1] + (4, 4))
        out[..., :3, :3] = skew(v[..., :3])
        out[..., :3, 3] = v[..., 3:]
        return out
    raise ValueError(f"hat expects a 3- or 6-vector, got shape {v.shape}")


def vee(X):
    """Inverse of :func:`hat` (3x3 -> so(3) coordinates, 4x4 -> se(3))."""
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] == (3, 3):
        return unskew(X)
    if X.shape[-2:] == (4, 4):
        return np.concatenate([unskew(X[..., :3, :3]), X[..., :3, 3]], axis=-1)
    raise ValueError(f"vee expects a 3x3 or 4x4 matrix, got shape {X.shape}")


def hat_se2(xi):
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != 3:
        raise ValueError(f"se(2) twist must have 3 entries, got shape {xi.shape}")
    out = np.zeros(xi.shape[:-1] + (3, 3))
    out[..., 0, 1] = -xi[..., 0]
    out[..., 1, 0] = xi[..., 0]
    out[..., 0, 2] = xi[..., 1]
    out[..., 1, 2] = xi[..., 2]
    return out


def vee_se2(X):
    X = np.asarray(X, dtype=float)
    return np.stack([X[..., 1, 0], X[..., 0, 2], X[..., 1, 2]], axis=-1)


def twist_hat(xi):
    """Algebra matrix for an SE(2) (3 entries) or SE(3) (6 entries) twist."""
    xi = np.asarray(xi, dtype=float)
    return hat_se2(xi) if xi.shape[-1] == 3 else hat(xi)


def twist_vee(X):
    X = np.asarray(X, dtype=float)
    return vee_se2(X) if X.shape[-2:] == (3, 3) else vee(X)


def _series_or(theta, exact, coeffs):
    """Evaluate ``exact(theta)`` or the even series ``sum c_i theta^(2i)``."""
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    series = coeffs[0] + t2 * (coeffs[1] + t2 * coeffs[2])
    return np.where(small, series, exact(safe))


def _rodrigues_coeffs(theta):
    a = _series_or(theta, lambda t: np.sin(t) / t, (1.0, -1.0 / 6.0, 1.0 / 120.0))
    b = _series_or(theta, lambda t: (1.0 - np.cos(t)) / t**2,
                   (0.5, -1.0 / 24.0, 1.0 / 720.0))
    c = _series_or(theta, lambda t: (t - np.sin(t)) / t**3,
                   (1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0))
    return a, b, c


def exp_so3(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _ = _rodrigues_coeffs(theta)
    W = skew(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def left_jacobian_so3(w):
    """J(w) = I + (1-cos t)/t^2 W + (t - sin t)/t^3 W^2."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    _, b, c = _rodrigues_coeffs(theta)
    W = skew(w)
    return np.eye(3) + b[..., None, None] * W + c[..., None, None] * (W @ W)


def _so3_angle_axis(R):
    R = np.asarray(R, dtype=float)
    s = 0.5 * unskew(R - np.swapaxes(R, -1, -2))
    sin_t = np.linalg.norm(s, axis=-1)
    cos_t = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    return theta, s, sin_t


def log_so3(R):
    theta, s, sin_t = _so3_angle_axis(R)
    if np.any(theta >= np.pi - BRANCH_MARGIN):
        raise BranchError("rotation angle too close to pi for a principal logarithm")
    # theta / sin(theta), series below the small-angle threshold
    ratio = _series_or(theta, lambda t: t / np.sin(t), (1.0, 1.0 / 6.0, 7.0 / 360.0))
    return ratio[..., None] * s


def exp_se3(xi):
    xi = np.asarray(xi, dtype=float)
    w, v = xi[..., :3], xi[..., 3:]
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = exp_so3(w)
    out[..., :3, 3] = np.einsum("...ij,...j->...i", left_jacobian_so3(w), v)
    out[..., 3, 3] = 1.0
    return out


def log_se3(g):
    g = np.asarray(g, dtype=float)
    w = log_so3(g[..., :3, :3])
    theta = np.linalg.norm(w, axis=-1)
    # J^{-1} = I - W/2 + k W^2, k = 1/t^2 - (1 + cos t) / (2 t sin t)
    k = _series_or(theta,
                   lambda t: 1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)),
                   (1.0 / 12.0, 1.0 / 720.0, 1.0 / 30240.0))
    W = skew(w)
    Jinv = np.eye(3) - 0.5 * W + k[..., None, None] * (W @ W)
    v = np.einsum("...ij,...j->...i", Jinv, g[..., :3, 3])
    return np.concatenate([w, v], axis=-1)


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def exp_se2(xi):
    xi = np.asarray(xi, dtype=float)
    w = xi[..., 0]
    t = np.abs(w)
    a = _series_or(t, lambda u: np.sin(u) / u, (1.0, -1.0 / 6.0, 1.0 / 120.0))
    # (1 - cos w) / w is odd in w: w * (1 - cos t) / t^2
    b = w * _series_or(t, lambda u: (1.0 - np.cos(u)) / u**2,
                       (0.5, -1.0 / 24.0, 1.0 / 720.0))
    vx, vy = xi[..., 1], xi[..., 2]
    out = np.zeros(xi.shape[:-1] + (3, 3))
    out[..., :2, :2] = _rot2(w)
    out[..., 0, 2] = a * vx - b * vy
    out[..., 1, 2] = b * vx + a * vy
    out[..., 2, 2] = 1.0
    return out


def log_se2(g):
    g = np.asarray(g, dtype=float)
    theta = np.arctan2(g[..., 1, 0], g[..., 0, 0])
    if np.any(np.abs(theta) >= np.pi - BRANCH_MARGIN):
        raise BranchError("heading too close to pi for a principal logarithm")
    t = np.abs(theta)
    # (t/2) cot(t/2)
    a = _series_or(t, lambda u: 0.5 * u * np.sin(u) / (1.0 - np.cos(u)),
                   (1.0, -1.0 / 12.0, -1.0 / 720.0))
    b = 0.5 * theta
    px, py = g[..., 0, 2], g[..., 1, 2]
    return np.stack([theta, a * px + b * py, -b * px + a * py], axis=-1)


def exp_group(xi):
    """Exp for an SE(2) (3-entry) or SE(3) (6-entry) twist."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] == 3:
        return exp_se2(xi)
    if xi.shape[-1] == 6:
        return exp_se3(xi)
    raise ValueError(f"twist must have 3 or 6 entries, got shape {xi.shape}")


def log_group(g):
    """Principal Log^vee of an SE(2) or SE(3) element.

    Raises :class:`BranchError` if the rotation angle is within
    ``BRANCH_MARGIN`` of pi.
    """
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] == (3, 3):
        return log_se2(g)
    if g.shape[-2:] == (4, 4):
        return log_se3(g)
    raise ValueError(f"expected a 3x3 or 4x4 homogeneous matrix, got {g.shape}")


def dof(g):
    """Twist dimension for a group element (3 for SE(2), 6 for SE(3))."""
    return 3 if np.shape(g)[-1] == 3 else 6


def identity_like(g):
    return np.eye(np.shape(g)[-1])


def compose(g1, g2):
    out = np.matmul(g1, g2)
    out[..., -1, :-1] = 0.0
    out[..., -1, -1] = 1.0
    return out


def inverse(g):
    g = np.asarray(g, dtype=float)
    n = g.shape[-1] - 1
    Rt = np.swapaxes(g[..., :n, :n], -1, -2)
    out = np.zeros_like(g)
    out[..., :n, :n] = Rt
    out[..., :n, n] = -np.einsum("...ij,...j->...i", Rt, g[..., :n, n])
    out[..., n, n] = 1.0
    return out


def adjoint(g):
    """Matrix of Ad_g acting on twist coordinates."""
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] == (4, 4):
        R, p = g[..., :3, :3], g[..., :3, 3]
        out = np.zeros(g.shape[:-2] + (6, 6))
        out[..., :3, :3] = R
        out[..., 3:, 3:] = R
        out[..., 3:, :3] = skew(p) @ R
        return out
    if g.shape[-2:] == (3, 3):
        out = np.zeros(g.shape[:-2] + (3, 3))
        out[..., 0, 0] = 1.0
        out[..., 1:, 1:] = g[..., :2, :2]
        out[..., 1, 0] = g[..., 1, 2]
        out[..., 2, 0] = -g[..., 0, 2]
        return out
    raise ValueError(f"expected a 3x3 or 4x4 homogeneous matrix, got {g.shape}")


def bracket(xi, zeta):
    """Lie bracket [xi, zeta] in twist coordinates."""
    X, Z = twist_hat(xi), twist_hat(zeta)
    return twist_vee(X @ Z - Z @ X)


def bch_truncated(xi, zeta):
    """Log(Exp(xi) Exp(zeta)) through third order in the twists.

    Accurate to O(|(xi, zeta)|^4); intended for |xi|, |zeta| <= 0.5.
    """
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    xz = bracket(xi, zeta)
    return (xi + zeta + 0.5 * xz
            + bracket(xi, xz) / 12.0
            + bracket(zeta, bracket(zeta, xi)) / 12.0)


def orthonormalize(g):
    """Project the rotation block onto SO(n) (polar decomposition)."""
    g = np.array(g, dtype=float)
    n = g.shape[-1] - 1
    U, _, Vt = np.linalg.svd(g[..., :n, :n])
    D = np.ones(U.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    g[..., :n, :n] = (U * D[..., None, :]) @ Vt
    return g


def make_pose(R=None, p=None, dim=3):
    """Homogeneous matrix from a rotation block and translation."""
    g = np.eye(dim + 1)
    if R is not None:
        g[:dim, :dim] = R
    if p is not None:
        g[:dim, dim] = p
    return g


def se2_pose(x, y, theta):
    return make_pose(_rot2(np.asarray(theta, dtype=float)), (x, y), dim=2)


def is_group_element(g, tol=1e-9):
    g = np.asarray(g, dtype=float)
    n = g.shape[-1] - 1
    R = g[:n, :n]
    last = np.zeros(n + 1)
    last[-1] = 1.0
    return (np.allclose(R.T @ R, np.eye(n), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
            and np.array_equal(g[n], last))
