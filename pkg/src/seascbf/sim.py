"""Closed-loop stochastic simulation and Monte Carlo campaigns.

One trial runs estimate -> filter -> act -> measure for T steps.  Every
trial owns an independent generator seeded with ``seed_base + index``, so
the campaign statistics do not depend on how trials are scheduled.
"""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .barriers import (AffineFacet, CorridorEnvironment, affine_eval, composed_eval,
                       expected_barrier, select_active_facet)
from .certificates import riccati_prerun
from .estimation import LieBelief, lie_predict, lie_update_pose, lie_update_position
from .filters import (LINEAR_BUILDERS, FilterConfig, FilterStatus, InfeasibleError,
                      lie_safety_filter, nominal_goto_pose, nominal_goto_position,
                      project_halfspace)

REORTHONORMALIZE_EVERY = 100
METHODS = ("sea-scbf", "sea-ed", "sea-pcbf", "none")


@dataclass(frozen=True)
class Scenario:
    """Everything one trial needs.

    ``kind`` is "linear", "se2" or "se3".  Linear scenarios carry a
    ``LinearSystem`` and an ``AffineFacet`` or ``CorridorEnvironment``
    barrier; group scenarios carry the noise covariances directly and a
    vectorised group barrier.  ``nominal`` is ``("constant", u)`` or
    ``("goto", goal)`` where the goal is a point or a pose.
    """

    kind: str
    barrier: object
    method: str
    filter: FilterConfig
    nominal: tuple
    initial_state: np.ndarray
    initial_cov: np.ndarray
    horizon: int
    dt: float = 0.1
    system: object = None
    process_cov: np.ndarray = None
    meas_cov: np.ndarray = None
    measurement: str = "pose"
    initial_mean: np.ndarray = None
    bootstrap: bool = False
    env_mode: str = "accurate"
    goal: np.ndarray = None
    goal_radius: float = 0.3

    def __post_init__(self):
        if self.kind not in ("linear", "se2", "se3"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown filter method {self.method!r}")
        if self.dt <= 0.0 or self.horizon < 1:
            raise ValueError("need dt > 0 and horizon >= 1")
        if self.env_mode not in ("accurate", "inaccurate"):
            raise ValueError("env_mode must be 'accurate' or 'inaccurate'")
        if self.nominal[0] not in ("constant", "goto"):
            raise ValueError(f"unknown nominal controller {self.nominal[0]!r}")
        if self.kind == "linear":
            if self.system is None:
                raise ValueError("linear scenarios need a system")
            if not isinstance(self.barrier, (AffineFacet, CorridorEnvironment)):
                raise ValueError("linear scenarios need an affine barrier")
        else:
            if self.process_cov is None or self.meas_cov is None:
                raise ValueError("group scenarios need process and measurement covariances")
            if self.measurement not in ("pose", "position"):
                raise ValueError("measurement must be 'pose' or 'position'")
        if self.initial_mean is None and not self.bootstrap:
            object.__setattr__(self, "initial_mean", np.array(self.initial_state, float))

    def replace(self, **kw):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(kw)
        return Scenario(**fields)


@dataclass
class TrialResult:
    seed: int
    states: np.ndarray
    means: np.ndarray
    barrier: np.ndarray          # true h(x_k), k = 0..T
    barrier_estimate: np.ndarray
    first_exit: int | None
    goal_reached: bool
    solver_flags: dict = field(default_factory=dict)

    @property
    def position(self):
        """Final true position."""
        x = self.states[-1]
        if x.ndim == 2:
            n = x.shape[0] - 1
            return x[:n, n]
        return x


@dataclass
class CampaignMetrics:
    n_trials: int
    exit_frequency: np.ndarray   # over horizons t = 0..T
    safety_rate: float
    goal_reach: float
    trace_mean: np.ndarray
    trace_std: np.ndarray
    trace_min: np.ndarray
    endpoints: np.ndarray
    solver_flags: dict
    trials: list = field(default_factory=list, repr=False)


def noise_factor(cov):
    """A matrix L with L L^T = cov, allowing singular covariances."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        return V * np.sqrt(np.maximum(w, 0.0))


def step_linear(state, u, sys, rng, factors=None):
    """Advance p' = A p + B u + w and measure z' = H p' + v."""
    Lw, Lv = factors or (noise_factor(sys.process_cov), noise_factor(sys.meas_cov))
    nxt = sys.A @ state + sys.B @ u + Lw @ rng.standard_normal(Lw.shape[1])
    z = sys.H @ nxt + Lv @ rng.standard_normal(Lv.shape[1])
    return nxt, z


def measure_lie(g, meas_cov, rng, model, factor=None):
    L = noise_factor(meas_cov) if factor is None else factor
    v = L @ rng.standard_normal(L.shape[1])
    if model == "pose":
        return lie.compose(g, lie.exp_group(v))
    n = g.shape[0] - 1
    return g[:n, n] + v


def step_lie(g, xi, dt, process_cov, rng, meas_cov, model="pose", factors=None):
    """g' = g Exp(xi dt) Exp(w) and a pose or position measurement of g'."""
    Lw, Lv = factors or (noise_factor(process_cov), noise_factor(meas_cov))
    w = Lw @ rng.standard_normal(Lw.shape[1])
    nxt = lie.compose(lie.compose(g, lie.exp_group(np.asarray(xi) * dt)), lie.exp_group(w))
    return nxt, measure_lie(nxt, meas_cov, rng, model, Lv)


def _in_goal(scn, x):
    if scn.goal is None:
        return False
    goal = np.asarray(scn.goal, dtype=float)
    if x.ndim == 2:
        n = x.shape[0] - 1
        x = x[:n, n]
        if goal.ndim == 2:
            goal = goal[:n, n]
    return bool(np.linalg.norm(x - goal) <= scn.goal_radius)


def _nominal(scn, mean):
    kind, arg = scn.nominal
    if kind == "constant":
        return np.array(arg, dtype=float)
    if scn.kind == "linear":
        return nominal_goto_position(mean, arg)
    return nominal_goto_pose(mean, np.asarray(arg, dtype=float))


def _true_barrier(scn, x):
    if isinstance(scn.barrier, CorridorEnvironment):
        return composed_eval(scn.barrier, x)[0]
    return affine_eval(scn.barrier, x)


def _active_facet(scn, x, mean):
    if isinstance(scn.barrier, AffineFacet):
        return scn.barrier
    ref = x if scn.env_mode == "accurate" else mean
    return scn.barrier.facet(select_active_facet(scn.barrier, ref))


def _run_linear(scn, rng):
    sys = scn.system
    T = scn.horizon
    factors = (noise_factor(sys.process_cov), noise_factor(sys.meas_cov))
    x = np.array(scn.initial_state, dtype=float)
    if scn.bootstrap:
        z0 = sys.H @ x + factors[1] @ rng.standard_normal(factors[1].shape[1])
        mean = np.linalg.lstsq(sys.H, z0, rcond=None)[0]
    else:
        mean = np.array(scn.initial_mean, dtype=float)
    # covariances and gains do not depend on the data
    run = riccati_prerun(sys, scn.initial_cov, T)
    states, means = [x], [mean]
    flags = Counter()
    for k in range(T):
        cov = run.posterior[k]
        u = _nominal(scn, mean)
        if scn.method != "none":
            facet = _active_facet(scn, x, mean)
            belief = _Belief(mean, cov)
            con = LINEAR_BUILDERS[scn.method](belief, sys, facet, scn.filter)
            try:
                u = project_halfspace(u, con, scn.filter.equality_mask)
            except InfeasibleError:
                flags["infeasible"] += 1
        x, z = step_linear(x, u, sys, rng, factors)
        prior = sys.A @ mean + sys.B @ u
        mean = prior + run.gain[k + 1] @ (z - sys.H @ prior)
        states.append(x)
        means.append(mean)
    states, means = np.array(states), np.array(means)
    Y = np.array([_true_barrier(scn, s) for s in states])
    Y_est = np.array([_true_barrier(scn, m) for m in means])
    return states, means, Y, Y_est, flags


@dataclass(frozen=True)
class _Belief:
    mean: np.ndarray
    cov: np.ndarray


def _run_lie(scn, rng):
    T, dt = scn.horizon, scn.dt
    h = scn.barrier
    Lw, Lv = noise_factor(scn.process_cov), noise_factor(scn.meas_cov)
    g = np.array(scn.initial_state, dtype=float)
    belief = LieBelief(np.array(scn.initial_mean, dtype=float),
                       np.array(scn.initial_cov, dtype=float))
    update = lie_update_pose if scn.measurement == "pose" else lie_update_position
    states, means = [g], [belief.mean]
    Y_est = [expected_barrier(h, belief, scn.filter.curvature)]
    flags = Counter()
    for k in range(T):
        xi = _nominal(scn, belief.mean)
        if scn.method != "none":
            res = lie_safety_filter(belief, xi, h, scn.process_cov, dt, scn.filter)
            flags[res.status.value] += 1
            xi = res.xi
        else:
            xi = xi.copy()
            xi[list(scn.filter.equality_mask)] = 0.0
        g, z = step_lie(g, xi, dt, scn.process_cov, rng, scn.meas_cov,
                        scn.measurement, (Lw, Lv))
        belief = lie_predict(belief, lie.exp_group(xi * dt), scn.process_cov)
        belief = update(belief, z, scn.meas_cov)
        if (k + 1) % REORTHONORMALIZE_EVERY == 0:
            g = lie.orthonormalize(g)
            belief = LieBelief(lie.orthonormalize(belief.mean), belief.cov)
        states.append(g)
        means.append(belief.mean)
        Y_est.append(expected_barrier(h, belief, scn.filter.curvature))
    states, means = np.array(states), np.array(means)
    Y = np.asarray(h(states), dtype=float)
    return states, means, Y, np.array(Y_est), flags


def run_trial(scn, seed):
    rng = np.random.default_rng(seed)
    runner = _run_linear if scn.kind == "linear" else _run_lie
    states, means, Y, Y_est, flags = runner(scn, rng)
    unsafe = np.flatnonzero(Y < 0.0)
    first_exit = int(unsafe[0]) if unsafe.size else None
    reached = any(_in_goal(scn, s) for s in states)
    return TrialResult(int(seed), states, means, Y, Y_est, first_exit, reached, dict(flags))


def _run_indexed(args):
    scn, seed = args
    return run_trial(scn, seed)


def aggregate(trials, horizon):
    n = len(trials)
    exits = np.zeros(horizon + 1)
    for t in trials:
        if t.first_exit is not None:
            exits[t.first_exit:] += 1.0
    freq = exits / n
    traces = np.array([t.barrier for t in trials])
    flags = Counter()
    for t in trials:
        flags.update(t.solver_flags)
    return CampaignMetrics(
        n_trials=n,
        exit_frequency=freq,
        safety_rate=100.0 * (1.0 - freq[-1]),
        goal_reach=100.0 * sum(t.goal_reached for t in trials) / n,
        trace_mean=traces.mean(axis=0),
        trace_std=traces.std(axis=0),
        trace_min=traces.min(axis=0),
        endpoints=np.array([t.position for t in trials]),
        solver_flags=dict(flags),
        trials=list(trials),
    )


def monte_carlo(scn, n_trials, seed_base=0, threads=1, keep_trials=False):
    """Run ``n_trials`` seeded trials and aggregate them in trial order."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    seeds = [seed_base + i for i in range(n_trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(_run_indexed, [(scn, s) for s in seeds],
                                   chunksize=max(1, n_trials // (4 * threads))))
    else:
        trials = [run_trial(scn, s) for s in seeds]
    metrics = aggregate(trials, scn.horizon)
    if not keep_trials:
        metrics.trials = []
    return metrics


def infeasible_count(metrics):
    return metrics.solver_flags.get("infeasible", 0) + \
        metrics.solver_flags.get(FilterStatus.INFEASIBLE.value, 0)
