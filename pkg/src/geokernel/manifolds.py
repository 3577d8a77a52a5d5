"""Chart-based models of closed Riemannian manifolds.

Every catalog manifold is presented through a small atlas of explicit
charts together with an isometric embedding into Euclidean space.  The
embedding is the single source of geometric truth: the metric is the
pullback ``J^T J`` of the ambient inner product along the chart Jacobian
``J``, Christoffel symbols come from the Gauss relation

    Gamma^k_ij = g^{kl} <d2E/dxi dxj, dE/dxl>,

and chart transitions are performed by passing through the ambient space.
This keeps every chart exactly compatible with every other one, which the
flow integrator relies on when it hops charts mid-trajectory.

Curvature is evaluated analytically: surfaces (dim 2) use the Gauss
curvature obtained from the first and second fundamental forms, round
spheres use their constant sectional curvature, and flat tori return exact
zeros.  A finite-difference route through the Christoffel symbols is kept
in the test suite as an independent cross-check.

Conventions: ``curvature_action(x, v, w)`` returns the Jacobi operator
action R(w, v)v with the sign fixed so that on a unit round sphere, with
v, w orthonormal, the result equals w.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import BadParams, ChartSwitchFailed, OutOfChart

TWO_PI = 2.0 * np.pi

# Chart switching happens when the safety measure (a sine-like distance to
# the chart's degenerate set) drops below SWITCH_AT.  HARD_LIMIT is the
# safety below which evaluation is refused outright; the gap leaves room
# for integrator stages to overshoot without error.
SWITCH_AT = 0.25
HARD_LIMIT = 0.02


@dataclass(frozen=True)
class ChartPoint:
    """A point of the manifold given in one chart."""

    chart: int
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class TangentVec:
    """A tangent vector with its base point, in chart components."""

    base: ChartPoint
    comps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "comps", np.asarray(self.comps, dtype=float))


@dataclass(frozen=True)
class CovectorVec:
    """A covector with its base point, in chart components."""

    base: ChartPoint
    comps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "comps", np.asarray(self.comps, dtype=float))


class ManifoldModel:
    """Base class: an atlas of charts glued through an ambient embedding.

    Subclasses provide the embedding (value, Jacobian, Hessian), the
    inverse chart maps, wrap rules for periodic coordinates and a chart
    safety measure.  Everything metric-related is derived here.
    """

    name: str = ""
    dim: int = 0
    ambient_dim: int = 0
    n_charts: int = 1
    r_inj: float = 0.0
    params: Mapping[str, float] = {}

    # -- embedding interface -------------------------------------------------

    def embed(self, chart, coords):
        raise NotImplementedError

    def embed_jac(self, chart, coords):
        raise NotImplementedError

    def embed_hess(self, chart, coords):
        raise NotImplementedError

    def chart_coords(self, chart, ambient):
        """Invert the embedding of `chart` on its domain."""
        raise NotImplementedError

    def chart_safety(self, chart, coords):
        """Distance-like measure to the chart's degenerate set (large = safe)."""
        raise NotImplementedError

    def wrap(self, chart, coords):
        """Normalize periodic coordinates into the fundamental window."""
        return np.asarray(coords, dtype=float)

    def in_domain(self, chart, coords):
        return self.chart_safety(chart, coords) > HARD_LIMIT

    def coord_periodic(self, chart):
        """Which chart coordinates are periodic, with their periods (inf if not)."""
        return np.full(self.dim, np.inf)

    # -- derived geometry -----------------------------------------------------

    def metric(self, chart, coords):
        j = self.embed_jac(chart, coords)
        return np.einsum("...mi,...mj->...ij", j, j)

    def metric_inv(self, chart, coords):
        return np.linalg.inv(self.metric(chart, coords))

    def christoffel(self, chart, coords):
        """Symbols Gamma[k, i, j], symmetric in (i, j)."""
        j = self.embed_jac(chart, coords)
        h = self.embed_hess(chart, coords)
        b = np.einsum("...mij,...ml->...ijl", h, j)
        ginv = np.linalg.inv(np.einsum("...mi,...mj->...ij", j, j))
        return np.einsum("...kl,...ijl->...kij", ginv, b)

    def metric_deriv(self, chart, coords):
        """Partials dg[k, i, j] = d g_ij / d x^k, exact via the symbols."""
        g = self.metric(chart, coords)
        gam = self.christoffel(chart, coords)
        t = np.einsum("...lki,...lj->...kij", gam, g)
        return t + np.swapaxes(t, -1, -2)

    def gauss_curvature(self, chart, coords):
        """Gauss curvature of a surface from its fundamental forms."""
        if self.dim != 2:
            raise BadParams("gauss_curvature is only defined for surfaces")
        j = self.embed_jac(chart, coords)
        h = self.embed_hess(chart, coords)
        nrm = np.cross(j[..., 0], j[..., 1])
        nrm = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
        ii = np.einsum("...mij,...m->...ij", h, nrm)
        g = np.einsum("...mi,...mj->...ij", j, j)
        det_ii = ii[..., 0, 0] * ii[..., 1, 1] - ii[..., 0, 1] ** 2
        det_g = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        return det_ii / det_g

    def curvature_action(self, chart, coords, v, w):
        """Jacobi operator action R(w, v)v in chart components.

        Valid for surfaces (where the curvature tensor is determined by the
        Gauss curvature) and overridden by constant-curvature models.
        """
        k = self.gauss_curvature(chart, coords)[..., None]
        g = self.metric(chart, coords)
        vv = np.einsum("...ij,...i,...j->...", g, v, v)[..., None]
        vw = np.einsum("...ij,...i,...j->...", g, v, w)[..., None]
        return k * (vv * w - vw * v)

    # -- chart bookkeeping ------------------------------------------------------

    def best_chart(self, ambient):
        """Chart index with the largest safety at each ambient point."""
        saf = np.stack(
            [self.chart_safety(c, self.chart_coords(c, ambient)) for c in range(self.n_charts)],
            axis=-1,
        )
        return np.argmax(saf, axis=-1)

    def to_chart(self, chart_from, coords, chart_to):
        """Express chart points in another chart (through the ambient space)."""
        amb = self.embed(chart_from, coords)
        out = self.chart_coords(chart_to, amb)
        return self.wrap(chart_to, out)

    def push_vectors(self, chart_from, coords_from, cols, chart_to, coords_to):
        """Push tangent vectors (columns of `cols`, shape (..., n, k)) to another chart."""
        j_from = self.embed_jac(chart_from, coords_from)
        j_to = self.embed_jac(chart_to, coords_to)
        amb = np.einsum("...mi,...ik->...mk", j_from, cols)
        g_to = np.einsum("...mi,...mj->...ij", j_to, j_to)
        rhs = np.einsum("...mi,...mk->...ik", j_to, amb)
        return np.linalg.solve(g_to, rhs)


# ---------------------------------------------------------------------------
# standard polar chart family shared by the 2-sphere and the ellipsoid
# ---------------------------------------------------------------------------

_Q2 = (
    np.eye(3),
    np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
)


def _polar2(coords):
    th, ph = coords[..., 0], coords[..., 1]
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(ph), np.cos(ph)
    u = np.stack([st * cp, st * sp, ct], axis=-1)
    dth = np.stack([ct * cp, ct * sp, -st], axis=-1)
    dph = np.stack([-st * sp, st * cp, np.zeros_like(th)], axis=-1)
    return u, np.stack([dth, dph], axis=-1)


class _PolarSurface(ManifoldModel):
    """Surfaces of the form diag(a, b, c) . Q_chart . (polar unit vector)."""

    dim = 2
    ambient_dim = 3
    n_charts = 2

    def __init__(self, scale):
        self._scale = np.asarray(scale, dtype=float)

    def embed(self, chart, coords):
        u, _ = _polar2(np.asarray(coords, dtype=float))
        return np.einsum("ab,...b->...a", _Q2[chart], u) * self._scale

    def embed_jac(self, chart, coords):
        _, du = _polar2(np.asarray(coords, dtype=float))
        return np.einsum("ab,...bi->...ai", _Q2[chart], du) * self._scale[:, None]

    def embed_hess(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        th, ph = coords[..., 0], coords[..., 1]
        st, ct = np.sin(th), np.cos(th)
        sp, cp = np.sin(ph), np.cos(ph)
        zero = np.zeros_like(th)
        u = np.stack([st * cp, st * sp, ct], axis=-1)
        h = np.empty(coords.shape[:-1] + (3, 2, 2))
        h[..., 0, 0] = -u
        htp = np.stack([-ct * sp, ct * cp, zero], axis=-1)
        h[..., 0, 1] = htp
        h[..., 1, 0] = htp
        h[..., 1, 1] = np.stack([-st * cp, -st * sp, zero], axis=-1)
        out = np.einsum("ab,...bij->...aij", _Q2[chart], h)
        return out * self._scale[:, None, None]

    def chart_coords(self, chart, ambient):
        u = np.asarray(ambient, dtype=float) / self._scale
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        u = np.einsum("ba,...b->...a", _Q2[chart], u)
        th = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
        ph = np.arctan2(u[..., 1], u[..., 0]) % TWO_PI
        return np.stack([th, ph], axis=-1)

    def chart_safety(self, chart, coords):
        return np.sin(np.asarray(coords, dtype=float)[..., 0])

    def wrap(self, chart, coords):
        coords = np.array(coords, dtype=float)
        coords[..., 1] %= TWO_PI
        return coords

    def coord_periodic(self, chart):
        return np.array([np.inf, TWO_PI])


class RoundSphere2(_PolarSurface):
    """Round 2-sphere of radius r, covered by two polar chart copies."""

    name = "round_sphere"

    def __init__(self, r):
        if r <= 0:
            raise BadParams(f"sphere radius must be positive, got {r}")
        super().__init__((r, r, r))
        self.radius = float(r)
        self.r_inj = np.pi * float(r)
        self.params = {"r": float(r), "n": 2}

    def gauss_curvature(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.full(coords.shape[:-1], 1.0 / self.radius**2)

    def curvature_action(self, chart, coords, v, w):
        g = self.metric(chart, coords)
        vv = np.einsum("...ij,...i,...j->...", g, v, v)[..., None]
        vw = np.einsum("...ij,...i,...j->...", g, v, w)[..., None]
        return (vv * w - vw * v) / self.radius**2


class TriaxialEllipsoid(_PolarSurface):
    """Ellipsoid with semi-axes (a, b, c), induced metric from R^3."""

    name = "triaxial_ellipsoid"

    def __init__(self, a, b, c):
        if min(a, b, c) <= 0:
            raise BadParams(f"semi-axes must be positive, got {(a, b, c)}")
        super().__init__((a, b, c))
        self.semi_axes = (float(a), float(b), float(c))
        self.params = {"a": float(a), "b": float(b), "c": float(c)}
        self.r_inj = _ellipsoid_r_inj_bound(float(a), float(b), float(c))


def _ellipse_perimeter(a, b):
    from scipy.special import ellipe

    big, small = max(a, b), min(a, b)
    return 4.0 * big * ellipe(1.0 - (small / big) ** 2)


def _ellipsoid_r_inj_bound(a, b, c):
    # Configured lower bound: 0.9 * min(conjugate-point bound from the
    # curvature maximum at the axis tips, half the shortest principal
    # closed geodesic).  A dense shooting oracle cross-checks this in the
    # test suite; smaller values are always safe for the cutoff functions.
    k_tips = (a / (b * c)) ** 2, (b / (a * c)) ** 2, (c / (a * b)) ** 2
    conj = np.pi / np.sqrt(max(k_tips))
    loops = (
        _ellipse_perimeter(a, b) / 2.0,
        _ellipse_perimeter(a, c) / 2.0,
        _ellipse_perimeter(b, c) / 2.0,
    )
    return 0.9 * min(conj, min(loops))


class FlatTorus(ManifoldModel):
    """Flat torus R^n / (L_1 Z x ... x L_n Z), one periodic chart.

    The isometric embedding winds each coordinate around a circle of
    radius L_i / (2 pi) in its own plane, so the pullback metric is the
    identity and all Christoffel symbols vanish exactly.
    """

    name = "flat_torus"
    n_charts = 1

    def __init__(self, lengths):
        lengths = tuple(float(l) for l in np.atleast_1d(lengths))
        if any(l <= 0 for l in lengths):
            raise BadParams(f"side lengths must be positive, got {lengths}")
        self.lengths = np.array(lengths)
        self.dim = len(lengths)
        self.ambient_dim = 2 * self.dim
        self.r_inj = min(lengths) / 2.0
        self.params = {"lengths": list(lengths)}
        self._radii = self.lengths / TWO_PI

    def embed(self, chart, coords):
        ang = np.asarray(coords, dtype=float) / self._radii
        out = np.empty(ang.shape[:-1] + (self.ambient_dim,))
        out[..., 0::2] = self._radii * np.cos(ang)
        out[..., 1::2] = self._radii * np.sin(ang)
        return out

    def embed_jac(self, chart, coords):
        ang = np.asarray(coords, dtype=float) / self._radii
        j = np.zeros(ang.shape[:-1] + (self.ambient_dim, self.dim))
        for i in range(self.dim):
            j[..., 2 * i, i] = -np.sin(ang[..., i])
            j[..., 2 * i + 1, i] = np.cos(ang[..., i])
        return j

    def embed_hess(self, chart, coords):
        ang = np.asarray(coords, dtype=float) / self._radii
        h = np.zeros(ang.shape[:-1] + (self.ambient_dim, self.dim, self.dim))
        for i in range(self.dim):
            h[..., 2 * i, i, i] = -np.cos(ang[..., i]) / self._radii[i]
            h[..., 2 * i + 1, i, i] = -np.sin(ang[..., i]) / self._radii[i]
        return h

    def chart_coords(self, chart, ambient):
        amb = np.asarray(ambient, dtype=float)
        ang = np.arctan2(amb[..., 1::2], amb[..., 0::2])
        return (ang * self._radii) % self.lengths

    def chart_safety(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.full(coords.shape[:-1], np.inf)

    def wrap(self, chart, coords):
        return np.asarray(coords, dtype=float) % self.lengths

    def coord_periodic(self, chart):
        return self.lengths.copy()

    def metric(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.broadcast_to(np.eye(self.dim), coords.shape[:-1] + (self.dim, self.dim)).copy()

    def metric_inv(self, chart, coords):
        return self.metric(chart, coords)

    def christoffel(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.zeros(coords.shape[:-1] + (self.dim,) * 3)

    def metric_deriv(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.zeros(coords.shape[:-1] + (self.dim,) * 3)

    def gauss_curvature(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.zeros(coords.shape[:-1])

    def curvature_action(self, chart, coords, v, w):
        return np.zeros_like(np.asarray(w, dtype=float))


class TorusOfRevolution(ManifoldModel):
    """Torus of revolution: tube radius r around a circle of radius R."""

    name = "torus_of_revolution"
    dim = 2
    ambient_dim = 3
    n_charts = 1

    def __init__(self, big_radius, tube_radius):
        if not (big_radius > tube_radius > 0):
            raise BadParams(
                f"need R > r > 0 for an embedded torus, got R={big_radius}, r={tube_radius}"
            )
        self.big_radius = float(big_radius)
        self.tube_radius = float(tube_radius)
        self.params = {"R": self.big_radius, "r": self.tube_radius}
        r, rr = self.tube_radius, self.big_radius
        k_max = 1.0 / (r * (rr + r))
        self.r_inj = 0.9 * min(np.pi * r, np.pi * (rr - r), np.pi / np.sqrt(k_max))

    def embed(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        u, v = coords[..., 0], coords[..., 1]
        ring = self.big_radius + self.tube_radius * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), self.tube_radius * np.sin(v)], axis=-1)

    def embed_jac(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        u, v = coords[..., 0], coords[..., 1]
        r = self.tube_radius
        ring = self.big_radius + r * np.cos(v)
        zero = np.zeros_like(u)
        du = np.stack([-ring * np.sin(u), ring * np.cos(u), zero], axis=-1)
        dv = np.stack([-r * np.sin(v) * np.cos(u), -r * np.sin(v) * np.sin(u), r * np.cos(v)], axis=-1)
        return np.stack([du, dv], axis=-1)

    def embed_hess(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        u, v = coords[..., 0], coords[..., 1]
        r = self.tube_radius
        ring = self.big_radius + r * np.cos(v)
        zero = np.zeros_like(u)
        h = np.empty(coords.shape[:-1] + (3, 2, 2))
        h[..., 0, 0] = np.stack([-ring * np.cos(u), -ring * np.sin(u), zero], axis=-1)
        huv = np.stack([r * np.sin(v) * np.sin(u), -r * np.sin(v) * np.cos(u), zero], axis=-1)
        h[..., 0, 1] = huv
        h[..., 1, 0] = huv
        h[..., 1, 1] = np.stack(
            [-r * np.cos(v) * np.cos(u), -r * np.cos(v) * np.sin(u), -r * np.sin(v)], axis=-1
        )
        return h

    def chart_coords(self, chart, ambient):
        amb = np.asarray(ambient, dtype=float)
        u = np.arctan2(amb[..., 1], amb[..., 0]) % TWO_PI
        rho = np.hypot(amb[..., 0], amb[..., 1]) - self.big_radius
        v = np.arctan2(amb[..., 2] / self.tube_radius, rho / self.tube_radius) % TWO_PI
        return np.stack([u, v], axis=-1)

    def chart_safety(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.full(coords.shape[:-1], np.inf)

    def wrap(self, chart, coords):
        return np.asarray(coords, dtype=float) % TWO_PI

    def coord_periodic(self, chart):
        return np.array([TWO_PI, TWO_PI])

    def gauss_curvature(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        v = coords[..., 1]
        r = self.tube_radius
        return np.cos(v) / (r * (self.big_radius + r * np.cos(v)))


_Q3 = (
    np.eye(4),
    np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
        ]
    ),
)


class RoundSphere3(ManifoldModel):
    """Round 3-sphere of radius r in R^4, two polar chart copies.

    Each chart is degenerate on a great circle; the two circles are linked
    and disjoint, so every point is safe in at least one chart.
    """

    name = "round_sphere"
    dim = 3
    ambient_dim = 4
    n_charts = 2

    def __init__(self, r):
        if r <= 0:
            raise BadParams(f"sphere radius must be positive, got {r}")
        self.radius = float(r)
        self.r_inj = np.pi * float(r)
        self.params = {"r": float(r), "n": 3}

    @staticmethod
    def _trig(coords):
        t1, t2, ph = coords[..., 0], coords[..., 1], coords[..., 2]
        return np.sin(t1), np.cos(t1), np.sin(t2), np.cos(t2), np.sin(ph), np.cos(ph)

    def embed(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        s1, c1, s2, c2, sp, cp = self._trig(coords)
        u = np.stack([c1, s1 * c2, s1 * s2 * cp, s1 * s2 * sp], axis=-1)
        return self.radius * np.einsum("ab,...b->...a", _Q3[chart], u)

    def embed_jac(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        s1, c1, s2, c2, sp, cp = self._trig(coords)
        zero = np.zeros_like(s1)
        d1 = np.stack([-s1, c1 * c2, c1 * s2 * cp, c1 * s2 * sp], axis=-1)
        d2 = np.stack([zero, -s1 * s2, s1 * c2 * cp, s1 * c2 * sp], axis=-1)
        d3 = np.stack([zero, zero, -s1 * s2 * sp, s1 * s2 * cp], axis=-1)
        j = np.stack([d1, d2, d3], axis=-1)
        return self.radius * np.einsum("ab,...bi->...ai", _Q3[chart], j)

    def embed_hess(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        s1, c1, s2, c2, sp, cp = self._trig(coords)
        zero = np.zeros_like(s1)
        u = np.stack([c1, s1 * c2, s1 * s2 * cp, s1 * s2 * sp], axis=-1)
        h = np.empty(coords.shape[:-1] + (4, 3, 3))
        h[..., 0, 0] = -u
        h12 = np.stack([zero, -c1 * s2, c1 * c2 * cp, c1 * c2 * sp], axis=-1)
        h13 = np.stack([zero, zero, -c1 * s2 * sp, c1 * s2 * cp], axis=-1)
        h23 = np.stack([zero, zero, -s1 * c2 * sp, s1 * c2 * cp], axis=-1)
        h[..., 0, 1] = h12
        h[..., 1, 0] = h12
        h[..., 0, 2] = h13
        h[..., 2, 0] = h13
        h[..., 1, 2] = h23
        h[..., 2, 1] = h23
        h[..., 1, 1] = np.stack([zero, -s1 * c2, -s1 * s2 * cp, -s1 * s2 * sp], axis=-1)
        h[..., 2, 2] = np.stack([zero, zero, -s1 * s2 * cp, -s1 * s2 * sp], axis=-1)
        return self.radius * np.einsum("ab,...bij->...aij", _Q3[chart], h)

    def chart_coords(self, chart, ambient):
        u = np.asarray(ambient, dtype=float) / self.radius
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        u = np.einsum("ba,...b->...a", _Q3[chart], u)
        t1 = np.arccos(np.clip(u[..., 0], -1.0, 1.0))
        s1 = np.sqrt(np.maximum(1.0 - u[..., 0] ** 2, 1e-300))
        t2 = np.arccos(np.clip(u[..., 1] / s1, -1.0, 1.0))
        ph = np.arctan2(u[..., 3], u[..., 2]) % TWO_PI
        return np.stack([t1, t2, ph], axis=-1)

    def chart_safety(self, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.sin(coords[..., 0]) * np.sin(coords[..., 1])

    def wrap(self, chart, coords):
        coords = np.array(coords, dtype=float)
        coords[..., 2] %= TWO_PI
        return coords

    def coord_periodic(self, chart):
        return np.array([np.inf, np.inf, TWO_PI])

    def curvature_action(self, chart, coords, v, w):
        g = self.metric(chart, coords)
        vv = np.einsum("...ij,...i,...j->...", g, v, v)[..., None]
        vw = np.einsum("...ij,...i,...j->...", g, v, w)[..., None]
        return (vv * w - vw * v) / self.radius**2


# ---------------------------------------------------------------------------
# catalog and point-level API
# ---------------------------------------------------------------------------


def catalog_build(name, **params):
    """Build a catalog manifold by name.

    Names: ``flat_torus`` (lengths), ``round_sphere`` (r, n in {2, 3}),
    ``triaxial_ellipsoid`` (a, b, c), ``torus_of_revolution`` (R, r).
    """
    if name == "flat_torus":
        return FlatTorus(params["lengths"])
    if name == "round_sphere":
        n = int(params.get("n", 2))
        if n == 2:
            return RoundSphere2(params["r"])
        if n == 3:
            return RoundSphere3(params["r"])
        raise BadParams(f"round_sphere supports n in (2, 3), got n={n}")
    if name == "triaxial_ellipsoid":
        return TriaxialEllipsoid(params["a"], params["b"], params["c"])
    if name == "torus_of_revolution":
        return TorusOfRevolution(params["R"], params["r"])
    raise BadParams(f"unknown manifold {name!r}")


def make_point(model, chart, coords):
    """Validated, wrapped chart point."""
    chart = int(chart)
    if not 0 <= chart < model.n_charts:
        raise BadParams(f"chart {chart} out of range for {model.name}")
    coords = model.wrap(chart, np.asarray(coords, dtype=float))
    if coords.shape != (model.dim,):
        raise BadParams(f"expected {model.dim} coordinates, got shape {coords.shape}")
    if not model.in_domain(chart, coords):
        raise OutOfChart(f"coords {coords} outside the domain of chart {chart}")
    return ChartPoint(chart, coords)


def metric_at(model, x):
    if not model.in_domain(x.chart, x.coords):
        raise OutOfChart(f"coords {x.coords} outside the domain of chart {x.chart}")
    return model.metric(x.chart, x.coords)


def christoffel_at(model, x):
    if not model.in_domain(x.chart, x.coords):
        raise OutOfChart(f"coords {x.coords} outside the domain of chart {x.chart}")
    return model.christoffel(x.chart, x.coords)


def curvature_apply(model, x, v, w):
    """R(w, v)v at x, as a tangent vector."""
    out = model.curvature_action(x.chart, x.coords, v.comps, w.comps)
    return TangentVec(x, out)


def norm_of(model, vec):
    g = model.metric(vec.base.chart, vec.base.coords)
    return float(np.sqrt(np.einsum("ij,i,j->", g, vec.comps, vec.comps)))


def unit_normalize(model, vec):
    n = norm_of(model, vec)
    if n == 0:
        raise BadParams("cannot normalize the zero vector")
    return TangentVec(vec.base, vec.comps / n)


def pairing(eta, vec):
    """Covector-vector pairing (both must sit at the same base point)."""
    return float(np.dot(eta.comps, vec.comps))


def flat_of(model, vec):
    g = model.metric(vec.base.chart, vec.base.coords)
    return CovectorVec(vec.base, g @ vec.comps)


def sharp_of(model, eta):
    g = model.metric(eta.base.chart, eta.base.coords)
    return TangentVec(eta.base, np.linalg.solve(g, eta.comps))


def transition_point(model, x, chart_to):
    coords = model.to_chart(x.chart, x.coords, chart_to)
    return make_point(model, chart_to, coords)


def transition_vector(model, vec, chart_to):
    x = vec.base
    coords_to = model.to_chart(x.chart, x.coords, chart_to)
    comps = model.push_vectors(x.chart, x.coords, vec.comps[..., None], chart_to, coords_to)[..., 0]
    return TangentVec(make_point(model, chart_to, coords_to), comps)


def transition_covector(model, eta, chart_to):
    # raise, push, lower: exact because both charts induce the same metric
    vec = sharp_of(model, eta)
    return flat_of(model, transition_vector(model, vec, chart_to))


def orthonormal_frame(model, chart, coords, v=None):
    """Orthonormal frame, vectorized; first column along v when given.

    Without v: columns of the inverse transposed Cholesky factor of g.
    With v (assumed unit): for surfaces the g-rotation of v by a quarter
    turn; in dimension 3 a deterministic Gram-Schmidt pivot plus the
    metric cross product.
    """
    coords = np.asarray(coords, dtype=float)
    g = model.metric(chart, coords)
    if v is None:
        ell = np.linalg.cholesky(g)
        return np.linalg.solve(np.swapaxes(ell, -1, -2), np.broadcast_to(np.eye(model.dim), g.shape).copy())
    v = np.asarray(v, dtype=float)
    if model.dim == 2:
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        root = np.sqrt(det)[..., None]
        w = np.stack(
            [
                (-g[..., 0, 1] * v[..., 0] - g[..., 1, 1] * v[..., 1]),
                (g[..., 0, 0] * v[..., 0] + g[..., 0, 1] * v[..., 1]),
            ],
            axis=-1,
        ) / root
        return np.stack([v, w], axis=-1)
    if model.dim == 3:
        basis = np.linalg.solve(
            np.swapaxes(np.linalg.cholesky(g), -1, -2),
            np.broadcast_to(np.eye(3), g.shape).copy(),
        )
        proj = np.einsum("...ij,...i,...jk->...k", g, v, basis)
        cand = basis - v[..., None] * proj[..., None, :]
        nrm2 = np.einsum("...ij,...ik,...jk->...k", g, cand, cand)
        pick = np.argmax(nrm2, axis=-1)
        e2 = np.take_along_axis(cand, pick[..., None, None], axis=-1)[..., 0]
        e2 = e2 / np.sqrt(np.take_along_axis(nrm2, pick[..., None], axis=-1))
        eps = np.zeros((3, 3, 3))
        eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
        eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
        det = np.linalg.det(g)
        cov = np.sqrt(det)[..., None] * np.einsum("lij,...i,...j->...l", eps, v, e2)
        e3 = np.linalg.solve(g, cov[..., None])[..., 0]
        return np.stack([v, e2, e3], axis=-1)
    raise BadParams(f"no frame construction for dim {model.dim}")
