"""Finite-time exit-probability certificates for linear systems with affine barriers.

Everything here is data-free: the Kalman covariances of a linear-Gaussian
system do not depend on controls or measurements, so the sub-Gaussian
proxies can be computed offline from a Riccati pre-run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import clean_cov, kalman_gain

PROXY_FLOOR = 1e-300
WEIGHT_OVERFLOW = 1e300
GRID_POINTS = 1000
GOLDEN_TOL = 1e-12


@dataclass(frozen=True)
class RiccatiRun:
    """Prior/posterior covariances and gains for k = 0..T.

    ``prior[0]`` and ``gain[0]`` are undefined (no update at k = 0) and
    stored as NaN.
    """

    prior: np.ndarray
    posterior: np.ndarray
    gain: np.ndarray

    @property
    def horizon(self):
        return self.posterior.shape[0] - 1


def riccati_prerun(sys, cov0, T):
    if T < 1:
        raise ValueError("horizon must be at least 1")
    n, d = sys.n, sys.H.shape[0]
    prior = np.full((T + 1, n, n), np.nan)
    post = np.empty((T + 1, n, n))
    gain = np.full((T + 1, n, d), np.nan)
    post[0] = clean_cov(np.asarray(cov0, dtype=float))
    for k in range(T):
        P = clean_cov(sys.A @ post[k] @ sys.A.T + sys.process_cov)
        K, _ = kalman_gain(P, sys.H, sys.meas_cov)
        I_KH = np.eye(n) - K @ sys.H
        prior[k + 1], gain[k + 1] = P, K
        post[k + 1] = clean_cov(I_KH @ P @ I_KH.T + K @ sys.meas_cov @ K.T)
    return RiccatiRun(prior, post, gain)


def tau_proxy(c, cov):
    """Variance proxy of the estimation error c^T (p - mu)."""
    c = np.asarray(c, dtype=float)
    return max(float(c @ cov @ c), PROXY_FLOOR)


def sigma_proxy(c, run, sys, k):
    """Variance proxy of the posterior-estimate innovation at step k + 1."""
    if not 0 <= k < run.horizon:
        raise IndexError(f"step {k} outside 0..{run.horizon - 1}")
    c = np.asarray(c, dtype=float)
    K = run.gain[k + 1]
    S = sys.H @ run.prior[k + 1] @ sys.H.T + sys.meas_cov
    return float(c @ K @ S @ K.T @ c)


@dataclass(frozen=True)
class CertificateInputs:
    horizon: int
    alpha: float
    y0: float
    sigma_proxies: np.ndarray  # k = 0..T-1, proxy for step k + 1
    tau_proxies: np.ndarray    # k = 0..T

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.y0 > 0.0:
            raise ValueError("initial margin must be positive")
        s = np.asarray(self.sigma_proxies, dtype=float)
        t = np.asarray(self.tau_proxies, dtype=float)
        if s.shape != (self.horizon,) or t.shape != (self.horizon + 1,):
            raise ValueError("proxy lengths must be T and T + 1")
        if np.any(s < 0.0) or np.any(t <= 0.0):
            raise ValueError("proxies must be positive")
        object.__setattr__(self, "sigma_proxies", s)
        object.__setattr__(self, "tau_proxies", t)

    @classmethod
    def from_riccati(cls, sys, run, c, y0, alpha, horizon=None):
        T = run.horizon if horizon is None else horizon
        if T > run.horizon:
            raise ValueError("horizon exceeds the Riccati run")
        sig = np.array([sigma_proxy(c, run, sys, k) for k in range(T)])
        tau = np.array([tau_proxy(c, run.posterior[k]) for k in range(T + 1)])
        return cls(T, alpha, y0, sig, tau)

    def truncated(self, T):
        return CertificateInputs(T, self.alpha, self.y0, self.sigma_proxies[:T],
                                 self.tau_proxies[:T + 1])


class WeightOverflowError(OverflowError):
    pass


def accumulate_v(inputs):
    """sum_i sigma_{i+1}^2 alpha^{-2(i+1)}, summed in ascending i."""
    total = 0.0
    for i, s in enumerate(inputs.sigma_proxies):
        w = inputs.alpha ** (-2.0 * (i + 1))
        if w > WEIGHT_OVERFLOW:
            raise WeightOverflowError(
                f"alpha^-2(i+1) = {w:.3g} at i = {i}; horizon too long for alpha = {inputs.alpha}")
        total = math.fsum((total, s * w))
    return total


@dataclass(frozen=True)
class BoundTerms:
    drift: float      # posterior estimate falls below eta
    error: float      # estimation error exceeds eta at some step
    raw: float

    @property
    def value(self):
        return min(1.0, max(0.0, self.raw))


def eta_range(inputs):
    return inputs.alpha ** inputs.horizon * inputs.y0


def bound_terms(inputs, eta, v=None):
    hi = eta_range(inputs)
    if not 0.0 < eta < hi:
        raise ValueError(f"eta = {eta:.6g} outside (0, {hi:.6g})")
    v = accumulate_v(inputs) if v is None else v
    gap = inputs.y0 - inputs.alpha ** (-inputs.horizon) * eta
    drift = math.exp(-gap * gap / (2.0 * v)) if v > 0.0 else 0.0
    error = float(np.sum(np.exp(-eta * eta / (2.0 * inputs.tau_proxies))))
    return BoundTerms(drift, error, drift + error)


def exit_bound(inputs, eta):
    """Upper bound on the T-step exit probability, clamped to [0, 1]."""
    return bound_terms(inputs, eta).value


def _raw_objective(inputs, v):
    scale = inputs.alpha ** (-inputs.horizon)
    tau = inputs.tau_proxies

    def f(eta):
        eta = np.asarray(eta, dtype=float)
        gap = inputs.y0 - scale * eta
        drift = np.exp(-gap * gap / (2.0 * v)) if v > 0.0 else np.zeros_like(eta)
        error = np.exp(-np.multiply.outer(eta * eta, 0.5 / tau)).sum(axis=-1)
        return drift + error

    return f


@dataclass(frozen=True)
class Certificate:
    horizon: int
    alpha: float
    y0: float
    v: float
    eta: float
    bound: float
    terms: BoundTerms = field(repr=False)


def optimize_eta(inputs):
    """Minimise the bound over eta: grid scan, then golden-section refinement."""
    hi = eta_range(inputs)
    eps = 1e-9 * hi
    if hi <= 2.0 * eps or not np.isfinite(hi):
        raise ValueError("degenerate eta range")
    v = accumulate_v(inputs)
    f = _raw_objective(inputs, v)
    grid = np.linspace(eps, hi - eps, GRID_POINTS)
    vals = f(grid)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = b - invphi * (b - a), a + invphi * (b - a)
    f1, f2 = float(f(x1)), float(f(x2))
    while b - a > GOLDEN_TOL * hi:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = float(f(x1))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = float(f(x2))
    eta, best = (x1, f1) if f1 <= f2 else (x2, f2)
    if vals[i] < best:
        eta, best = float(grid[i]), float(vals[i])
    terms = bound_terms(inputs, eta, v)
    return Certificate(inputs.horizon, inputs.alpha, inputs.y0, v, float(eta),
                       terms.value, terms)


@dataclass(frozen=True)
class Unsupported:
    """Returned when no closed-form certificate exists for a scenario."""

    reason: str


def certify(scenario):
    """Certificate for a linear scenario, or ``Unsupported`` for Lie-group ones."""
    if scenario.kind != "linear":
        return Unsupported(f"no closed-form proxies for {scenario.kind} scenarios")
    facet = scenario.barrier
    run = riccati_prerun(scenario.system, scenario.initial_cov, scenario.horizon)
    y0 = float(np.asarray(facet.c) @ scenario.initial_mean - facet.b)
    inputs = CertificateInputs.from_riccati(scenario.system, run, facet.c, y0,
                                            scenario.filter.alpha)
    return optimize_eta(inputs)
