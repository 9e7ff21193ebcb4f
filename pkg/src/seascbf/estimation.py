"""Kalman filtering in Euclidean space and on SE(2)/SE(3).

All covariance updates use the Joseph form and are re-symmetrised; tiny
negative eigenvalues left by roundoff are clamped to zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import lie

MAX_INNOVATION_COND = 1e12
_PSD_CLAMP = 1e-12
_PSD_FAIL = 1e-10


class SingularInnovationError(np.linalg.LinAlgError):
    """Innovation covariance is singular or too badly conditioned."""


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class LieBelief:
    """Group-valued mean with a covariance in left-invariant twist coordinates."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class LinearSystem:
    """p' = A p + B u + w,  z = H p + v,  w ~ N(0, process_cov), v ~ N(0, meas_cov)."""

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    process_cov: np.ndarray
    meas_cov: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.H.shape[1] != n:
            raise ValueError("B and H must match the state dimension")
        if self.process_cov.shape != (n, n):
            raise ValueError("process_cov must be n x n")
        d = self.H.shape[0]
        if self.meas_cov.shape != (d, d):
            raise ValueError("meas_cov must be d x d")

    @property
    def n(self):
        return self.A.shape[0]

    @classmethod
    def integrator(cls, n, dt, process_cov, meas_cov):
        """A = I, B = I dt, H = I (the setting of every linear experiment)."""
        eye = np.eye(n)
        return cls(eye, eye * dt, eye.copy(), np.asarray(process_cov, float),
                   np.asarray(meas_cov, float))


def clean_cov(P):
    """Symmetrise and clamp roundoff-level negative eigenvalues to zero."""
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w[0] < -_PSD_FAIL * max(1.0, abs(w[-1])):
        raise ValueError(f"covariance lost positive semidefiniteness (min eig {w[0]:.3e})")
    if w[0] < 0.0:
        w = np.where(w < _PSD_CLAMP, np.maximum(w, 0.0), w)
        P = (V * w) @ V.T
        P = 0.5 * (P + P.T)
    return P


def kalman_gain(P_prior, H, R):
    """K = P H^T S^{-1} via a Cholesky solve, with a conditioning guard."""
    S = H @ P_prior @ H.T + R
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0.0 or w[-1] / w[0] > MAX_INNOVATION_COND:
        raise SingularInnovationError(
            f"innovation covariance ill-conditioned (eigenvalues {w[0]:.3e}..{w[-1]:.3e})")
    cho = scipy.linalg.cho_factor(S)
    K = scipy.linalg.cho_solve(cho, H @ P_prior).T
    return K, S


def joseph_update(P_prior, K, H, R):
    I_KH = np.eye(P_prior.shape[0]) - K @ H
    return clean_cov(I_KH @ P_prior @ I_KH.T + K @ R @ K.T)


def kf_predict(belief, sys, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.B.shape[1],):
        raise ValueError(f"control has shape {u.shape}, expected ({sys.B.shape[1]},)")
    mean = sys.A @ belief.mean + sys.B @ u
    cov = clean_cov(sys.A @ belief.cov @ sys.A.T + sys.process_cov)
    return GaussianBelief(mean, cov)


def kf_update(belief, sys, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (sys.H.shape[0],):
        raise ValueError(f"measurement has shape {z.shape}, expected ({sys.H.shape[0]},)")
    K, _ = kalman_gain(belief.cov, sys.H, sys.meas_cov)
    mean = belief.mean + K @ (z - sys.H @ belief.mean)
    return GaussianBelief(mean, joseph_update(belief.cov, K, sys.H, sys.meas_cov))


def lie_predict(belief, U, process_cov):
    """mean' = mean U,  cov' = Ad_{U^-1} cov Ad_{U^-1}^T + process_cov."""
    Ad = lie.adjoint(lie.inverse(U))
    return LieBelief(lie.compose(belief.mean, U),
                     clean_cov(Ad @ belief.cov @ Ad.T + process_cov))


def _lie_correct(belief, r, H, R):
    K, _ = kalman_gain(belief.cov, H, R)
    mean = lie.compose(belief.mean, lie.exp_group(K @ r))
    return LieBelief(mean, joseph_update(belief.cov, K, H, R))


def lie_update_pose(belief, z, meas_cov):
    """Update from a full pose measurement z = g Exp(v)."""
    r = lie.log_group(lie.compose(lie.inverse(belief.mean), z))
    return _lie_correct(belief, r, np.eye(r.size), meas_cov)


def position_jacobian(mean):
    """Measurement matrix (0, R) of a position-only measurement at ``mean``."""
    n = mean.shape[0] - 1
    d = lie.dof(mean)
    H = np.zeros((n, d))
    H[:, d - n:] = mean[:n, :n]
    return H


def lie_update_position(belief, z, meas_cov):
    """Update from a position measurement z = p + v."""
    n = belief.mean.shape[0] - 1
    r = np.asarray(z, dtype=float) - belief.mean[:n, n]
    return _lie_correct(belief, r, position_jacobian(belief.mean), meas_cov)


def empirical_moments(samples, tol=1e-10, max_iter=100):
    """Group mean and covariance of samples (fixed-point iteration).

    The mean is the point where the average left-invariant error
    Log(mean^-1 g_i) vanishes; the covariance is the second moment of
    those errors.  Starts from the first sample.
    """
    G = np.asarray(samples, dtype=float)
    if G.ndim != 3 or G.shape[0] < 2:
        raise ValueError("need at least two stacked group elements")
    mu = G[0].copy()
    for _ in range(max_iter):
        E = lie.log_group(lie.compose(lie.inverse(mu)[None], G))
        step = E.mean(axis=0)
        mu = lie.compose(mu, lie.exp_group(step))
        if np.linalg.norm(step) < tol:
            E = lie.log_group(lie.compose(lie.inverse(mu)[None], G))
            return LieBelief(mu, clean_cov(E.T @ E / G.shape[0]))
    raise NonConvergenceError(f"group mean did not converge in {max_iter} iterations")
