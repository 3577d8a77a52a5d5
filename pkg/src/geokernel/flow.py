"""Batched geodesic flow with transparent chart hopping.

The integrator advances a whole family of geodesics at once.  State is a
struct of arrays: a chart index per element, chart coordinates, velocity
components, and optional extra arrays that ride along with their own
right-hand sides (parallel frames, Jacobi blocks, variational data).

Classical RK4 is used throughout.  Stages of a step are evaluated in the
element's current chart; after each completed step coordinates are
wrapped, the speed is renormalized to its initial value, and elements
whose chart safety dropped below the switch threshold are re-expressed in
the best available chart.  Extras declare how they behave under a chart
switch: 'none' for chart-invariant data (components in a parallel
orthonormal frame), 'vectors' for arrays of shape (B, n, k) whose columns
are tangent vectors in chart components.

Two driving modes cover every use in the package:

  * sweep       -- one common increasing schedule of arc-length nodes for
                   the whole batch, with a callback at each node (fans of
                   geodesics sampled along their length);
  * rk4_to      -- an individual signed target per element, with inactive
                   elements compacted away as they finish (exponential
                   maps, jump simulation, shooting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams, ChartSwitchFailed, NoConvergence
from .manifolds import HARD_LIMIT, SWITCH_AT, ChartPoint, TangentVec, make_point

DEFAULT_STEP = 5.0e-3

_VALID_KINDS = ("none", "vectors")


class FlowState:
    """Struct-of-arrays state for a batch of geodesics."""

    __slots__ = ("chart", "x", "v", "speed", "extras", "kinds")

    def __init__(self, chart, x, v, speed, extras=None, kinds=None):
        self.chart = chart
        self.x = x
        self.v = v
        self.speed = speed
        self.extras = {} if extras is None else extras
        self.kinds = {} if kinds is None else kinds

    @property
    def size(self):
        return self.x.shape[0]

    def copy(self):
        return FlowState(
            self.chart.copy(),
            self.x.copy(),
            self.v.copy(),
            self.speed.copy(),
            {k: a.copy() for k, a in self.extras.items()},
            dict(self.kinds),
        )

    def take(self, idx):
        return FlowState(
            self.chart[idx],
            self.x[idx],
            self.v[idx],
            self.speed[idx],
            {k: a[idx] for k, a in self.extras.items()},
            dict(self.kinds),
        )

    def put(self, idx, sub):
        self.chart[idx] = sub.chart
        self.x[idx] = sub.x
        self.v[idx] = sub.v
        self.speed[idx] = sub.speed
        for k in self.extras:
            self.extras[k][idx] = sub.extras[k]


def make_state(model, chart, x, v, extras=None):
    """Build a FlowState from per-element chart indices, coords and velocities.

    `extras` maps a name to a pair (kind, array); kind is 'none' or
    'vectors' (see the module docstring).
    """
    chart = np.atleast_1d(np.asarray(chart, dtype=int)).copy()
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    v = np.atleast_2d(np.asarray(v, dtype=float)).copy()
    speed = np.empty(x.shape[0])
    for c, idx in _chart_groups(chart):
        g = model.metric(c, x[idx])
        speed[idx] = np.sqrt(np.einsum("...ij,...i,...j->...", g, v[idx], v[idx]))
    ext, kinds = {}, {}
    if extras:
        for name, (kind, arr) in extras.items():
            if kind not in _VALID_KINDS:
                raise BadParams(f"unknown extra kind {kind!r}")
            ext[name] = np.asarray(arr, dtype=float).copy()
            kinds[name] = kind
    return FlowState(chart, x, v, speed, ext, kinds)


def state_from_vector(model, vec, extras=None):
    return make_state(model, [vec.base.chart], vec.base.coords[None], vec.comps[None], extras)


def _chart_groups(chart):
    vals = np.unique(chart)
    if vals.size == 1:
        yield int(vals[0]), slice(None)
        return
    for c in vals:
        yield int(c), np.nonzero(chart == c)[0]


def _rates(model, chart, x, v, extras, extra_rhs):
    dx = v
    dv = np.empty_like(v)
    dext = {k: np.empty_like(a) for k, a in extras.items()}
    for c, idx in _chart_groups(chart):
        gamma = model.christoffel(c, x[idx])
        dv[idx] = -np.einsum("...kij,...i,...j->...k", gamma, v[idx], v[idx])
        if extra_rhs is not None:
            sub = {k: a[idx] for k, a in extras.items()}
            for k, d in extra_rhs(model, c, x[idx], v[idx], sub, gamma).items():
                dext[k][idx] = d
    return dx, dv, dext


def _bcast(dt, arr):
    if np.isscalar(dt):
        return dt
    return dt.reshape(dt.shape + (1,) * (arr.ndim - 1))


def _rk4_substep(model, state, dt, extra_rhs):
    x0, v0, e0 = state.x, state.v, state.extras
    k1 = _rates(model, state.chart, x0, v0, e0, extra_rhs)

    half = 0.5 * dt
    x1 = x0 + _bcast(half, x0) * k1[0]
    v1 = v0 + _bcast(half, v0) * k1[1]
    e1 = {k: e0[k] + _bcast(half, e0[k]) * k1[2][k] for k in e0}
    k2 = _rates(model, state.chart, x1, v1, e1, extra_rhs)

    x2 = x0 + _bcast(half, x0) * k2[0]
    v2 = v0 + _bcast(half, v0) * k2[1]
    e2 = {k: e0[k] + _bcast(half, e0[k]) * k2[2][k] for k in e0}
    k3 = _rates(model, state.chart, x2, v2, e2, extra_rhs)

    x3 = x0 + _bcast(dt, x0) * k3[0]
    v3 = v0 + _bcast(dt, v0) * k3[1]
    e3 = {k: e0[k] + _bcast(dt, e0[k]) * k3[2][k] for k in e0}
    k4 = _rates(model, state.chart, x3, v3, e3, extra_rhs)

    w = _bcast(dt / 6.0, x0)
    state.x = x0 + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    state.v = v0 + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    for k in e0:
        wk = _bcast(dt / 6.0, e0[k])
        state.extras[k] = e0[k] + wk * (k1[2][k] + 2.0 * k2[2][k] + 2.0 * k3[2][k] + k4[2][k])


def _post_step(model, state):
    for c, idx in _chart_groups(state.chart):
        state.x[idx] = model.wrap(c, state.x[idx])
        g = model.metric(c, state.x[idx])
        cur = np.sqrt(np.einsum("...ij,...i,...j->...", g, state.v[idx], state.v[idx]))
        state.v[idx] *= (state.speed[idx] / cur)[..., None]
    if model.n_charts > 1:
        _switch_charts(model, state)


def _switch_charts(model, state):
    saf = np.empty(state.size)
    for c, idx in _chart_groups(state.chart):
        saf[idx] = model.chart_safety(c, state.x[idx])
    low = np.nonzero(saf < SWITCH_AT)[0]
    if low.size == 0:
        return
    amb = np.empty((low.size, model.ambient_dim))
    for c, idx in _chart_groups(state.chart[low]):
        amb[idx] = model.embed(c, state.x[low][idx])
    best = model.best_chart(amb)
    move = np.nonzero(best != state.chart[low])[0]
    for c_new in np.unique(best[move]):
        sel = low[move[best[move] == c_new]]
        for c_old, idx in _chart_groups(state.chart[sel]):
            rows = sel[idx] if not isinstance(idx, slice) else sel
            x_old = state.x[rows]
            x_new = model.wrap(c_new, model.chart_coords(c_new, model.embed(c_old, x_old)))
            cols = [state.v[rows][..., None]]
            names = []
            for name, kind in state.kinds.items():
                if kind == "vectors":
                    cols.append(state.extras[name][rows])
                    names.append(name)
            stacked = np.concatenate(cols, axis=-1)
            pushed = model.push_vectors(c_old, x_old, stacked, c_new, x_new)
            state.x[rows] = x_new
            state.v[rows] = pushed[..., 0]
            off = 1
            for name in names:
                k = state.extras[name].shape[-1]
                state.extras[name][rows] = pushed[..., off : off + k]
                off += k
            state.chart[rows] = c_new
    # after switching, every element must be clear of the hard limit
    for c, idx in _chart_groups(state.chart[low]):
        rows = low[idx] if not isinstance(idx, slice) else low
        bad = model.chart_safety(c, state.x[rows]) <= HARD_LIMIT
        if np.any(bad):
            raise ChartSwitchFailed(
                f"no chart of {model.name} is safe at coords {state.x[rows][bad][0]}"
            )


def sweep(model, state, s_nodes, h, on_node=None, extra_rhs=None, s_start=0.0):
    """Advance the whole batch through a common schedule of times.

    `s_nodes` must be nondecreasing and start at or after `s_start`, the
    time the state currently sits at.  Substeps between consecutive nodes
    never exceed `h`.  For unit-speed states the schedule is arc length
    along each geodesic.
    """
    s_prev = s_start
    for i, s in enumerate(np.asarray(s_nodes, dtype=float)):
        gap = s - s_prev
        if gap < -1e-12:
            raise BadParams("sweep schedule must be nondecreasing")
        if gap > 1e-15:
            m = max(1, math.ceil(gap / h - 1e-9))
            dt = gap / m
            for _ in range(m):
                _rk4_substep(model, state, dt, extra_rhs)
                _post_step(model, state)
        if on_node is not None:
            on_node(i, float(s), state)
        s_prev = s
    return state


def rk4_to(model, state, targets, h, extra_rhs=None):
    """Advance each element by its own signed time, then stop it.

    Elements are compacted out of the working set as they finish, so a
    batch with very different path lengths costs what it should.
    """
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    m = np.ceil(np.abs(t) / h - 1e-9).astype(int)
    m[(m == 0) & (np.abs(t) > 0)] = 1
    dt = np.where(m > 0, t / np.maximum(m, 1), 0.0)
    remaining = m.copy()
    while True:
        act = np.nonzero(remaining > 0)[0]
        if act.size == 0:
            break
        sub = state.take(act)
        _rk4_substep(model, sub, dt[act], extra_rhs)
        _post_step(model, sub)
        state.put(act, sub)
        remaining[act] -= 1
    return state


# ---------------------------------------------------------------------------
# point-level operations
# ---------------------------------------------------------------------------


def columns_transport_rhs(model, chart, x, v, extras, gamma):
    """Parallel transport rates for every 'vectors' extra: w' = -Gamma[v, w]."""
    return {
        name: -np.einsum("...kij,...i,...jc->...kc", gamma, v, arr)
        for name, arr in extras.items()
    }


def flow(model, vec, s, h=None):
    """Geodesic flow of a tangent vector for time s."""
    if h is None:
        h = DEFAULT_STEP
    state = state_from_vector(model, vec)
    rk4_to(model, state, [s], h)
    base = make_point(model, int(state.chart[0]), state.x[0])
    return TangentVec(base, state.v[0].copy())


def exp_map(model, x, v_comps, h=None):
    """Riemannian exponential of chart components v at the point x."""
    v_comps = np.asarray(v_comps, dtype=float)
    g = model.metric(x.chart, x.coords)
    length = float(np.sqrt(v_comps @ g @ v_comps))
    if length == 0.0:
        return x
    out = flow(model, TangentVec(x, v_comps / length), length, h=h)
    return out.base


def exp_map_batch(model, chart, coords, vels, h=None):
    """Exponential map of many vectors at one base point.

    `vels` has shape (B, n) in chart components; returns (charts, coords)
    of the endpoints.  Vectors may have any lengths, zero included.
    """
    if h is None:
        h = DEFAULT_STEP
    vels = np.asarray(vels, dtype=float)
    nb = vels.shape[0]
    g = model.metric(chart, coords)
    lengths = np.sqrt(np.einsum("ij,...i,...j->...", g, vels, vels))
    safe = np.where(lengths == 0.0, 1.0, lengths)
    unit = vels / safe[:, None]
    state = make_state(
        model,
        np.full(nb, chart, dtype=int),
        np.broadcast_to(np.asarray(coords, dtype=float), (nb, model.dim)),
        unit,
    )
    state.speed[:] = 1.0  # zero-length elements carry a zero vector; they never move
    rk4_to(model, state, lengths, h)
    return state.chart, state.x


def parallel_transport(model, w, vec, s, h=None):
    """Transport the tangent vector w along the geodesic of vec for time s."""
    if h is None:
        h = DEFAULT_STEP
    state = state_from_vector(
        model, vec, extras={"w": ("vectors", w.comps[None, :, None])}
    )
    rk4_to(model, state, [s], h, extra_rhs=columns_transport_rhs)
    base = make_point(model, int(state.chart[0]), state.x[0])
    return TangentVec(base, state.extras["w"][0, :, 0].copy())


@dataclass
class GeodesicSegment:
    """A geodesic sampled at a grid of parameter values."""

    s: np.ndarray
    chart: np.ndarray
    coords: np.ndarray
    velocity: np.ndarray


def flow_segment(model, vec, s, n_samples, h=None):
    """Sample the geodesic of vec on n_samples points of [0, s]."""
    if n_samples < 2:
        raise BadParams("need at least two sample points")
    if h is None:
        h = DEFAULT_STEP
    grid = np.linspace(0.0, s, n_samples)
    charts = np.empty(n_samples, dtype=int)
    coords = np.empty((n_samples, model.dim))
    velo = np.empty((n_samples, model.dim))
    state = state_from_vector(model, vec)

    def snap(i, _s, st):
        charts[i] = st.chart[0]
        coords[i] = st.x[0]
        velo[i] = st.v[0]

    sweep(model, state, grid, h, on_node=snap)
    return GeodesicSegment(grid, charts, coords, velo)


def distance_local(model, x, y, h=None, max_iter=25, tol=1.0e-12):
    """Geodesic distance for nearby points, by Newton shooting.

    Valid when d(x, y) is below the injectivity scale of the model; the
    residual is measured in the ambient embedding, which sidesteps chart
    seams.  Raises NoConvergence when shooting stalls or the minimizing
    vector is not inside the injectivity ball.
    """
    if h is None:
        h = DEFAULT_STEP
    target = model.embed(y.chart, y.coords)
    scale = max(1.0, float(np.linalg.norm(target)))
    j = model.embed_jac(x.chart, x.coords)
    g = model.metric(x.chart, x.coords)
    chord = target - model.embed(x.chart, x.coords)
    v = np.linalg.solve(g, j.T @ chord)
    if float(np.sqrt(v @ g @ v)) < 1e-14:
        return 0.0
    eps = 1.0e-6
    for _ in range(max_iter):
        probes = np.concatenate([v[None], v[None] + eps * np.eye(model.dim)])
        charts, coords = exp_map_batch(model, x.chart, x.coords, probes, h=h)
        ends = np.empty((model.dim + 1, model.ambient_dim))
        for c, idx in _chart_groups(charts):
            ends[idx] = model.embed(c, coords[idx])
        res = ends[0] - target
        if float(np.linalg.norm(res)) < tol * scale:
            break
        jac = (ends[1:] - ends[0]).T / eps
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        if not np.all(np.isfinite(step)):
            raise NoConvergence("shooting step is not finite")
        v = v + step
    else:
        raise NoConvergence(
            f"distance shooting did not reach {tol:g} in {max_iter} iterations"
        )
    d = float(np.sqrt(v @ g @ v))
    if d >= model.r_inj:
        raise NoConvergence(
            f"points are separated by {d:.6f}, beyond the local radius {model.r_inj:.6f}"
        )
    return d
