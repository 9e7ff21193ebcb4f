"""Safety filters: min ||u - u_nom||^2 subject to one barrier constraint.

Linear-Gaussian systems with affine barriers get a closed-form half-space
projection.  On SE(2)/SE(3) the constraint is nonlinear in the twist and is
handled by sequential linearisation with a trust region.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import lie
from .barriers import expected_barrier, moments_at
from .estimation import LieBelief

FEASIBILITY_TOL = 1e-8
VARIANCE_FLOOR = 1e-16


class InfeasibleError(ValueError):
    """The constraint cannot be met with the free control coordinates."""

    def __init__(self, a, r, mask):
        super().__init__(
            f"constraint a^T u >= {r:.6g} has no free direction "
            f"(|a| = {np.linalg.norm(a):.3g}, pinned = {sorted(mask)})")
        self.a, self.r, self.mask = a, r, mask


@dataclass(frozen=True)
class HalfspaceConstraint:
    """a^T u >= r."""

    a: np.ndarray
    r: float


@dataclass(frozen=True)
class FilterConfig:
    alpha: float = 0.9
    beta: float = 0.0
    beta_rate: float = 7.0
    pcbf_quantile: float = 0.0
    curvature: bool = True
    equality_mask: tuple = ()
    trust_radius: float = 0.5
    tol: float = 1e-6
    max_iter: int = 30
    fd_step: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if min(self.beta, self.beta_rate, self.pcbf_quantile) < 0.0:
            raise ValueError("beta, beta_rate and pcbf_quantile must be nonnegative")


def project_halfspace(u_nom, con, mask=()):
    """Exact minimiser of ||u - u_nom||^2 s.t. a^T u >= r, u[mask] = 0."""
    u = np.array(u_nom, dtype=float)
    a = np.array(con.a, dtype=float)
    if len(mask):
        idx = list(mask)
        u[idx] = 0.0
        a[idx] = 0.0
    gap = con.r - a @ u
    if gap <= 0.0:
        return u
    aa = a @ a
    if aa == 0.0:
        raise InfeasibleError(a, con.r, mask)
    return u + a * (gap / aa)


def beta_schedule(cfg, y_est):
    """beta exp(-rate * Y~): tightens the constraint near the boundary.

    Saturates at beta once the estimate is unsafe (Y~ < 0), where the
    exponential would otherwise demand unbounded control.
    """
    return cfg.beta * float(np.exp(-cfg.beta_rate * max(y_est, 0.0)))


def _affine_terms(belief, sys, facet, alpha):
    c = np.asarray(facet.c, dtype=float)
    A = sys.A
    A_a = A - alpha * np.eye(A.shape[0])
    m = (1.0 - alpha) * facet.b - c @ A_a @ belief.mean
    return c, A, A_a, m


def sea_ed_linear(belief, sys, facet, cfg):
    """E[h(p')|F] >= alpha E[h(p)|F]  ->  c^T B u >= m(mu)."""
    c, _, _, m = _affine_terms(belief, sys, facet, cfg.alpha)
    return HalfspaceConstraint(sys.B.T @ c, float(m))


def sea_scbf_linear(belief, sys, facet, cfg):
    """Expectation minus beta_k predicted std above alpha times the estimate."""
    c, A, _, m = _affine_terms(belief, sys, facet, cfg.alpha)
    y_est = float(c @ belief.mean - facet.b)
    var = c @ (A @ belief.cov @ A.T + sys.process_cov) @ c
    rho = beta_schedule(cfg, y_est) * np.sqrt(max(var, 0.0))
    return HalfspaceConstraint(sys.B.T @ c, float(m + rho))


def sea_pcbf_linear(belief, sys, facet, cfg):
    """Chance constraint P(h(p') >= alpha h(p) | F) >= delta, Gaussian form."""
    c, _, A_a, m = _affine_terms(belief, sys, facet, cfg.alpha)
    var = c @ (A_a @ belief.cov @ A_a.T + sys.process_cov) @ c
    s = cfg.pcbf_quantile * np.sqrt(max(var, 0.0))
    return HalfspaceConstraint(sys.B.T @ c, float(m + s))


LINEAR_BUILDERS = {
    "sea-scbf": sea_scbf_linear,
    "sea-ed": sea_ed_linear,
    "sea-pcbf": sea_pcbf_linear,
}


def nominal_goto_position(mean, goal):
    return np.asarray(goal, dtype=float) - np.asarray(mean, dtype=float)


def nominal_goto_pose(mean, goal):
    return lie.log_group(lie.compose(lie.inverse(mean), goal))


# ---------------------------------------------------------------------------
# nonlinear filter on SE(2)/SE(3)

class FilterStatus(str, Enum):
    NOMINAL = "nominal"
    CONVERGED = "converged"
    NONCONVERGENCE = "nonconvergence"
    INFEASIBLE = "infeasible"


@dataclass
class LieFilterResult:
    xi: np.ndarray
    status: FilterStatus
    constraint: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def feasible(self):
        return self.status is not FilterStatus.INFEASIBLE


class LieConstraint:
    """c(xi) = Psi(xi) - beta_k sqrt(Upsilon(xi)) - alpha Xi.

    Psi and Upsilon are the predicted barrier mean and variance after
    applying U = Exp(xi dt) to the belief; Xi is the current barrier
    estimate.  Evaluates many candidate twists in one vectorised call.
    """

    def __init__(self, belief, h, process_cov, dt, cfg):
        self.belief, self.h, self.dt, self.cfg = belief, h, dt, cfg
        self.process_cov = np.asarray(process_cov, dtype=float)
        self.y_est = expected_barrier(h, belief, cfg.curvature)
        self.beta_k = beta_schedule(cfg, self.y_est)

    def __call__(self, xis):
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        U = lie.exp_group(xis * self.dt)
        Ad = lie.adjoint(lie.inverse(U))
        cov = Ad @ self.belief.cov @ np.swapaxes(Ad, -1, -2) + self.process_cov
        mean = np.matmul(self.belief.mean, U)
        psi, ups = moments_at(self.h, mean, cov, self.cfg.curvature)
        return psi - self.beta_k * np.sqrt(np.maximum(ups, VARIANCE_FLOOR)) \
            - self.cfg.alpha * self.y_est

    def value_and_grad(self, xi, step):
        d = xi.size
        I = np.eye(d) * step
        vals = self(np.vstack([xi, xi + I, xi - I]))
        return vals[0], (vals[1:1 + d] - vals[1 + d:]) / (2.0 * step)


RESTORATION_STEPS = 10


class _Track:
    """Best feasible and least-violating iterates seen by the solver."""

    def __init__(self, xi_nom, xi, c):
        self.xi_nom = xi_nom
        self.best = None  # (objective, xi, c)
        self.least_bad = (c, xi.copy())
        self.history = [(xi.copy(), float(c))]

    def objective(self, x):
        return float(np.sum((x - self.xi_nom) ** 2))

    def record(self, xi, c):
        self.history.append((xi.copy(), float(c)))
        if c > self.least_bad[0]:
            self.least_bad = (c, xi.copy())
        if c >= -FEASIBILITY_TOL and (self.best is None or self.objective(xi) < self.best[0]):
            self.best = (self.objective(xi), xi.copy(), c)


def _sqp(xi, c, grad, con, track, mask, free, cfg, max_radius):
    """Trust-region linearise-and-project iterations under an l1 merit."""
    xi_nom, objective = track.xi_nom, track.objective
    radius, rho = max_radius, 0.0
    status = FilterStatus.NONCONVERGENCE
    it = 0
    for it in range(1, cfg.max_iter + 1):
        lin = HalfspaceConstraint(grad, float(grad @ xi - c))
        try:
            target = project_halfspace(xi_nom, lin, mask)
        except InfeasibleError:
            break
        step = target - xi
        norm = float(np.linalg.norm(step))
        if norm < cfg.tol and c >= -FEASIBILITY_TOL:
            status = FilterStatus.CONVERGED
            break
        a = grad * free
        lam = 2.0 * max(0.0, lin.r - a @ xi_nom) / max(a @ a, 1e-300)
        rho = max(rho, 2.0 * lam + 1.0)
        merit = objective(xi) + rho * max(0.0, -c)
        accepted = False
        while radius >= cfg.tol:
            trial = xi + step * min(1.0, radius / norm)
            c_trial = float(con(trial)[0])
            if objective(trial) + rho * max(0.0, -c_trial) < merit:
                accepted = True
                break
            radius *= 0.5
        if not accepted:
            break
        was_feasible, obj_old = c >= -FEASIBILITY_TOL, objective(xi)
        xi = trial
        c, grad = con.value_and_grad(xi, cfg.fd_step)
        track.record(xi, c)
        # finite-difference noise limits stationarity; also stop once a
        # feasible step no longer changes the objective
        if was_feasible and c >= -FEASIBILITY_TOL and \
                abs(objective(xi) - obj_old) <= cfg.tol * (1.0 + obj_old):
            status = FilterStatus.CONVERGED
            break
        radius = min(max_radius, 2.0 * radius)
    return xi, c, grad, status, it


def _restore(xi, c, grad, con, track, free, cfg, max_radius):
    """Gauss-Newton steps on the violation, capped by the trust radius."""
    for _ in range(RESTORATION_STEPS):
        if c >= 0.0:
            break
        a = grad * free
        if a @ a == 0.0:
            break
        step = a * (-c / (a @ a))
        norm = float(np.linalg.norm(step))
        if norm > max_radius:
            step *= max_radius / norm
        t = 1.0
        while t >= 1.0 / 64.0:
            c_trial = float(con(xi + t * step)[0])
            if c_trial > c:
                break
            t *= 0.5
        else:
            break
        xi = xi + t * step
        c, grad = con.value_and_grad(xi, cfg.fd_step)
        track.record(xi, c)
    return xi, c, grad


def _starts(xi_nom, free):
    """Deterministic initial points: the nominal, then the braking twist."""
    yield xi_nom
    d = xi_nom.size
    brake = xi_nom.copy()
    brake[d // 2:] = 0.0  # twists are rotation first
    yield brake * free


def lie_safety_filter(belief, xi_nom, h, process_cov, dt, cfg):
    """Closest twist to ``xi_nom`` whose one-step barrier constraint holds.

    Iterates xi <- project(xi_nom, linearisation of c at xi) under a trust
    region, accepting steps that decrease the l1 merit
    ||xi - xi_nom||^2 + rho max(0, -c(xi)) and halving the radius otherwise.
    If the iterations stall while infeasible, capped Gauss-Newton steps
    restore feasibility and the iterations restart from the restored point.
    When that still finds nothing feasible, the whole procedure is repeated
    from the braking twist (nominal rotation, zero translation).
    Returns the nominal unchanged if it already satisfies the constraint;
    otherwise the best feasible iterate, or the least-violating one flagged
    infeasible.
    """
    mask = tuple(cfg.equality_mask)
    free = np.ones(np.size(xi_nom), dtype=bool)
    free[list(mask)] = False
    xi_nom = np.array(xi_nom, dtype=float)
    xi_nom[~free] = 0.0
    con = LieConstraint(belief, h, process_cov, dt, cfg)

    xi = xi_nom.copy()
    c = float(con(xi)[0])
    if c >= 0.0:
        return LieFilterResult(xi, FilterStatus.NOMINAL, c, 0)
    c, grad = con.value_and_grad(xi, cfg.fd_step)
    track = _Track(xi_nom, xi, c)
    # the trust radius bounds the applied increment xi * dt
    max_radius = cfg.trust_radius / dt

    it = 0
    for start in _starts(xi_nom, free):
        if start is not xi_nom:
            xi = start
            c, grad = con.value_and_grad(xi, cfg.fd_step)
            track.record(xi, c)
        xi, c, grad, status, more = _sqp(xi, c, grad, con, track, mask, free, cfg, max_radius)
        it += more
        if c < 0.0:
            xi, c, grad = _restore(xi, c, grad, con, track, free, cfg, max_radius)
            if c >= -FEASIBILITY_TOL:
                xi, c, grad, status, more = _sqp(xi, c, grad, con, track, mask, free, cfg,
                                                 max_radius)
                it += more
        if track.best is not None:
            break

    if track.best is not None:
        return LieFilterResult(track.best[1], status, float(track.best[2]), it, track.history)
    return LieFilterResult(track.least_bad[1], FilterStatus.INFEASIBLE,
                           float(track.least_bad[0]), it, track.history)
