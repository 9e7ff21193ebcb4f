"""Barrier functions and their moments under Gaussian beliefs.

Euclidean barriers are affine facets composed with a Boolean AND (min).
Group-valued barriers (lane, slit) are vectorised callables
``h(G) -> values`` over stacked homogeneous matrices of shape
``(..., n+1, n+1)``; this lets the Lie derivatives be taken with one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import lie
from .estimation import lie_predict

GRAD_STEP = 1e-5
HESS_STEP = 1e-3


# ---------------------------------------------------------------------------
# affine facets and the corridor environment

@dataclass(frozen=True)
class AffineFacet:
    """h(p) = c^T p - b; nonnegative on the safe side."""

    c: np.ndarray
    b: float
    label: str = ""

    def __post_init__(self):
        if not np.linalg.norm(self.c) > 0.0:
            raise ValueError("facet normal must be nonzero")


def affine_eval(facet, p):
    return float(np.dot(facet.c, p) - facet.b)


def dodecahedron_normals():
    """Unit outward face normals of a regular dodecahedron (12 x 3)."""
    phi = 0.5 * (1.0 + np.sqrt(5.0))
    verts = []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            verts += [(0.0, s1, s2 * phi), (s1, s2 * phi, 0.0), (s2 * phi, 0.0, s1)]
    N = np.array(verts)
    return N / np.linalg.norm(N, axis=1, keepdims=True)


# inradius / circumradius of a regular dodecahedron
DODECAHEDRON_IN_OVER_CIRCUM = float(
    np.sqrt((25.0 + 11.0 * np.sqrt(5.0)) / 10.0) / 2.0
    / (np.sqrt(3.0) * (1.0 + np.sqrt(5.0)) / 4.0))


def dodecahedron(center, circumradius, label="obs"):
    center = np.asarray(center, dtype=float)
    r_in = circumradius * DODECAHEDRON_IN_OVER_CIRCUM
    # outward normal n: the facet is safe where n^T (p - center) >= r_in
    return [AffineFacet(n, float(n @ center + r_in), f"{label}.f{j}")
            for j, n in enumerate(dodecahedron_normals())]


@dataclass(frozen=True)
class CorridorEnvironment:
    """Convex obstacles (safe outside) plus wall half-spaces (safe inside).

    Facets are indexed flat: every obstacle's facets in order, then the
    walls.  Ties are always broken towards the lowest index.
    """

    obstacles: tuple
    walls: tuple
    _C: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)
    _owner: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        obstacles = tuple(tuple(o) for o in self.obstacles)
        walls = tuple(self.walls)
        for o in obstacles:
            if len(o) < 4:
                raise ValueError("each obstacle needs at least 4 facets")
        facets = [f for o in obstacles for f in o] + list(walls)
        for f in facets:
            if abs(np.linalg.norm(f.c) - 1.0) > 1e-9:
                raise ValueError(f"facet {f.label!r} normal is not unit length")
        owner = [i for i, o in enumerate(obstacles) for _ in o] + [-1] * len(walls)
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "_C", np.array([f.c for f in facets], dtype=float))
        object.__setattr__(self, "_b", np.array([f.b for f in facets], dtype=float))
        object.__setattr__(self, "_owner", np.array(owner))

    @property
    def facets(self):
        return [f for o in self.obstacles for f in o] + list(self.walls)

    @property
    def n_facets(self):
        return len(self._b)

    def facet(self, idx):
        return self.facets[idx]

    def facet_values(self, p):
        return self._C @ np.asarray(p, dtype=float) - self._b

    def candidates(self, values):
        """Per-obstacle separating facet (argmax) followed by every wall."""
        ids = []
        start = 0
        for o in self.obstacles:
            ids.append(start + int(np.argmax(values[start:start + len(o)])))
            start += len(o)
        ids.extend(range(start, len(values)))
        return ids


def select_active_facet(env, reference):
    """Active facet id for a reference point.

    Pass the true state for the "Accurate" environment mode and the belief
    mean for the "Inaccurate" mode.
    """
    values = env.facet_values(reference)
    cand = env.candidates(values)
    return cand[int(np.argmin(values[cand]))]


def composed_eval(env, p):
    """(min-composed barrier value, active facet id) at ``p``."""
    values = env.facet_values(p)
    cand = env.candidates(values)
    k = int(np.argmin(values[cand]))
    return float(values[cand[k]]), cand[k]


def corridor_from_config(cfg):
    obstacles = [dodecahedron(o["center"], o["circumradius"], label=f"obs{i}")
                 for i, o in enumerate(cfg["obstacles"])]
    walls = []
    for k, w in enumerate(cfg["walls"]):
        c = np.asarray(w["normal"], dtype=float)
        c = c / np.linalg.norm(c)
        walls.append(AffineFacet(c, float(w["offset"]), f"wall{k}"))
    return CorridorEnvironment(tuple(obstacles), tuple(walls))


# ---------------------------------------------------------------------------
# group-valued barriers

@dataclass(frozen=True)
class LaneBarrier:
    """h(g) = e_axis^T p + offset (SE(2) default: p_y + 2)."""

    offset: float = 2.0
    axis: int = 1

    def __call__(self, G):
        G = np.asarray(G, dtype=float)
        n = G.shape[-1] - 1
        return G[..., self.axis, n] + self.offset


def lane_eval(g, offset=2.0):
    return float(LaneBarrier(offset)(g))


@dataclass(frozen=True)
class SlitBarrierParams:
    wall_centers: tuple = ((2.25, -0.45, 0.0), (2.25, 0.45, 0.0))
    slit_normal: tuple = (0.0, 1.0, 0.0)
    disk_normal: tuple = (1.0, 0.0, 0.0)
    disk_radius: float = 0.5
    margin: float = 0.05
    far_value: float = 2.0
    sharpness: float = 10.0
    gate_cov: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    gate_offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("slit_normal", "disk_normal"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
        if min(self.disk_radius, self.margin, self.far_value, self.sharpness) <= 0.0:
            raise ValueError("radius, margin, far value and sharpness must be positive")
        if np.any(np.linalg.eigvalsh(np.asarray(self.gate_cov, float)) <= 0.0):
            raise ValueError("gate covariance must be positive definite")


class SlitBarrier:
    """Slit barrier for a disk-shaped rigid body on SE(3).

    A Gaussian gate around the slit centre blends a constant far-field
    value with a log-sum-exp soft minimum of the two wall clearances.  Each
    clearance is the distance to a wall along the slit normal minus the
    disk's half-extent along that normal, ``r sqrt(1 - (n_s^T R n_r)^2)``,
    minus a margin.  Wall 1 sits on the negative side of the slit normal.
    """

    def __init__(self, params=SlitBarrierParams()):
        self.params = params
        self.c1, self.c2 = (np.asarray(c, dtype=float) for c in params.wall_centers)
        self.n_s = np.asarray(params.slit_normal, dtype=float)
        self.n_r = np.asarray(params.disk_normal, dtype=float)
        self.center = 0.5 * (self.c1 + self.c2) + np.asarray(params.gate_offset, float)
        self.gate_prec = np.linalg.inv(np.asarray(params.gate_cov, dtype=float))

    def parts(self, G):
        """Gate value, soft-min clearance and the two clearances."""
        G = np.asarray(G, dtype=float)
        P = self.params
        R, p = G[..., :3, :3], G[..., :3, 3]
        q = (self.n_s @ R) @ self.n_r
        half_width = P.disk_radius * np.sqrt(np.maximum(0.0, 1.0 - q * q))
        phi1 = (p - self.c1) @ self.n_s - half_width - P.margin
        phi2 = (self.c2 - p) @ self.n_s - half_width - P.margin
        k = P.sharpness
        h_s = -np.logaddexp(-k * phi1, -k * phi2) / k
        d = p - self.center
        gate = np.exp(-0.5 * np.sum((d @ self.gate_prec) * d, axis=-1))
        return gate, h_s, phi1, phi2

    def __call__(self, G):
        gate, h_s, _, _ = self.parts(G)
        return self.params.far_value * (1.0 - gate) + gate * h_s


def slit_eval(params, g):
    return float(SlitBarrier(params)(g))


# ---------------------------------------------------------------------------
# Lie derivatives by central differences along left flows

@lru_cache(maxsize=32)
def _stencil(d, grad_step, hess_step, hessian):
    """Group offsets Exp(xi) for the value, gradient and Hessian stencils."""
    I = np.eye(d)
    rows = [np.zeros(d)]
    rows += list(grad_step * I) + list(-grad_step * I)
    if hessian:
        rows += list(hess_step * I) + list(-hess_step * I)
        for i in range(d):
            for j in range(i + 1, d):
                e = I[i] + I[j]
                f = I[i] - I[j]
                rows += [hess_step * e, hess_step * f, -hess_step * f, -hess_step * e]
    E = lie.exp_group(np.array(rows))
    E.setflags(write=False)
    return E


@lru_cache(maxsize=8)
def _upper_pairs(d):
    return np.triu_indices(d, 1)


def barrier_jet(h, G, grad_step=GRAD_STEP, hess_step=HESS_STEP, hessian=True):
    """Value, Lie gradient and symmetric Lie Hessian of ``h`` at stacked ``G``.

    The Hessian is the Hessian of xi -> h(g Exp(xi)) at 0, which equals the
    symmetric part of the nested Lie derivatives L_Ei L_Ej h.
    """
    G = np.asarray(G, dtype=float)
    single = G.ndim == 2
    if single:
        G = G[None]
    d = lie.dof(G)
    E = _stencil(d, float(grad_step), float(hess_step), bool(hessian))
    vals = np.asarray(h(np.matmul(G[:, None], E)), dtype=float)  # (K, P)
    h0 = vals[:, 0]
    grad = (vals[:, 1:1 + d] - vals[:, 1 + d:1 + 2 * d]) / (2.0 * grad_step)
    hess = None
    if hessian:
        base = 1 + 2 * d
        s2 = hess_step * hess_step
        plus = vals[:, base:base + d]
        minus = vals[:, base + d:base + 2 * d]
        iu, ju = _upper_pairs(d)
        a, b, c, e = (vals[:, base + 2 * d + r::4] for r in range(4))
        hess = np.empty((G.shape[0], d, d))
        hess[:, iu, ju] = hess[:, ju, iu] = (a - b - c + e) / (4.0 * s2)
        idx = np.arange(d)
        hess[:, idx, idx] = (plus - 2.0 * h0[:, None] + minus) / s2
    if single:
        return h0[0], grad[0], None if hess is None else hess[0]
    return h0, grad, hess


def lie_gradient(h, g, step=GRAD_STEP):
    """(L_E1 h, ..., L_Ed h) at g by central differences with step ``step``."""
    return barrier_jet(h, g, grad_step=step, hessian=False)[1]


def lie_hessian(h, g, step=HESS_STEP):
    return barrier_jet(h, g, hess_step=step)[2]


def expected_barrier(h, belief, curvature=True):
    """h(mean) + 1/2 tr(Hess h(mean) cov)."""
    h0, _, H = barrier_jet(h, belief.mean, hessian=curvature)
    if not curvature:
        return float(h0)
    return float(h0 + 0.5 * np.sum(H * belief.cov))


def moments_at(h, mean, cov, curvature=True):
    """Second-order mean and first-order variance of h(mean Exp(delta)).

    ``mean`` may be stacked (K, n+1, n+1) with matching ``cov`` (K, d, d).
    """
    h0, grad, H = barrier_jet(h, mean, hessian=curvature)
    var = np.einsum("...i,...ij,...j->...", grad, cov, grad)
    m = h0 + 0.5 * np.sum(H * cov, axis=(-2, -1)) if curvature else h0
    return m, np.maximum(var, 0.0)


def predicted_barrier_moments(h, belief, U, process_cov, curvature=True):
    """Mean and variance of h one step ahead under the Lie prediction."""
    prior = lie_predict(belief, U, process_cov)
    m, v = moments_at(h, prior.mean, prior.cov, curvature)
    return float(m), float(v)
