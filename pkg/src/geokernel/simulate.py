"""Monte Carlo for the pure-jump stable process behind the generator.

The process is approximated by a compound Poisson walk: wait an
exponential time, pick a direction uniformly in the tangent sphere, jump
that way along the geodesic a Pareto-distributed arclength, repeat.
Jumps shorter than eps are dropped without compensation; the jump law is
symmetric under v -> -v, so dropping them adds no drift, only an
O(eps^(2-2alpha)) error against C^2 fields, and `bias_bound` reports
that number for the run manifest.

Reproducibility contract: path i of a run seeded with s draws from
numpy's default_rng seeded with the pair (s, i).  The ensemble driver
consumes randomness for each path in exactly the order `simulate_path`
does (waiting time, then direction, then length, repeat), so any single
path of a batch can be replayed in isolation and lands on the same
endpoint bit for bit, no matter how the batch was scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams
from .fields import eval_field
from .flow import make_state, rk4_to
from .generator import GeneratorConfig, levy_constant, resolve_s_max, sphere_area
from .manifolds import ChartPoint, TangentVec, make_point, orthonormal_frame

__all__ = [
    "SimConfig",
    "PathRecord",
    "EnsembleResult",
    "resolve_cap",
    "jump_rate",
    "pareto_cdf",
    "pareto_mean",
    "sample_jump_length",
    "sample_direction",
    "simulate_path",
    "replay_path",
    "run_ensemble",
    "empirical_generator",
    "bias_bound",
]


@dataclass(frozen=True)
class SimConfig:
    """Knobs for the jump-walk sampler.

    `s_cap` may be left unset; drivers then derive it from the same tail
    tolerance the quadrature side uses, so stochastic and deterministic
    runs truncate the jump measure identically by default.
    """

    alpha: float = 0.5
    eps: float = 0.1
    s_cap: float | None = None
    t_end: float = 1.0
    n_paths: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise BadParams("alpha must lie in (0, 1)")
        if self.eps <= 0.0:
            raise BadParams("eps must be positive")
        if self.s_cap is not None and self.s_cap <= self.eps:
            raise BadParams("s_cap must exceed eps")
        if self.t_end <= 0.0:
            raise BadParams("t_end must be positive")
        if self.n_paths < 1:
            raise BadParams("n_paths must be positive")


def resolve_cap(model, cfg, tol=1.0e-4):
    """The jump-length cap: the configured one, or the quadrature tail cut."""
    if cfg.s_cap is not None:
        return float(cfg.s_cap)
    s_max, _, _ = resolve_s_max(model, GeneratorConfig(alpha=cfg.alpha, tol_tail=tol))
    return s_max


def jump_rate(model, cfg, s_cap=None):
    """Total jump intensity of the truncated process.

    This is the mass the stable density puts on jump lengths in
    [eps, s_cap]; waiting times between jumps are exponential with this
    rate.
    """
    if s_cap is None:
        s_cap = resolve_cap(model, cfg)
    a2 = 2.0 * cfg.alpha
    c = levy_constant(model.dim, cfg.alpha)
    lam = c * sphere_area(model.dim) * (cfg.eps ** -a2 - s_cap ** -a2) / a2
    if not (math.isfinite(lam) and lam > 0.0):
        raise BadParams("degenerate jump rate; check eps < s_cap")
    return lam


# ---------------------------------------------------------------------------
# jump-length law
# ---------------------------------------------------------------------------


def pareto_cdf(s, alpha, eps, s_cap):
    """Distribution function of the truncated jump length."""
    s = np.asarray(s, dtype=float)
    a2 = 2.0 * alpha
    num = eps ** -a2 - np.clip(s, eps, s_cap) ** -a2
    return num / (eps ** -a2 - s_cap ** -a2)


def pareto_mean(alpha, eps, s_cap):
    """Closed-form mean of the truncated jump length."""
    a2 = 2.0 * alpha
    norm = eps ** -a2 - s_cap ** -a2
    if a2 == 1.0:
        return math.log(s_cap / eps) / norm
    return a2 / (1.0 - a2) * (s_cap ** (1.0 - a2) - eps ** (1.0 - a2)) / norm


def sample_jump_length(rng, alpha, eps, s_cap, size=None):
    """Exact inverse-CDF draw of jump lengths in [eps, s_cap]."""
    if not 0.0 < eps < s_cap:
        raise BadParams("need 0 < eps < s_cap")
    a2 = 2.0 * alpha
    u = rng.random(size)
    return (eps ** -a2 - u * (eps ** -a2 - s_cap ** -a2)) ** (-1.0 / a2)


def _lengths_from_uniforms(u, alpha, eps, s_cap):
    a2 = 2.0 * alpha
    return (eps ** -a2 - u * (eps ** -a2 - s_cap ** -a2)) ** (-1.0 / a2)


# ---------------------------------------------------------------------------
# direction sampling
# ---------------------------------------------------------------------------


def _unit_sphere(rng, n):
    # draw order is part of the reproducibility contract; do not reorder
    if n == 2:
        theta = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([math.cos(theta), math.sin(theta)])
    z = rng.standard_normal(n)
    r = np.linalg.norm(z)
    while r < 1.0e-12:
        z = rng.standard_normal(n)
        r = np.linalg.norm(z)
    return z / r


def sample_direction(model, x, rng):
    """A g-unit tangent vector at x, uniform on the tangent sphere."""
    frame = orthonormal_frame(model, x.chart, x.coords[None])[0]
    return TangentVec(x, frame @ _unit_sphere(rng, model.dim))


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass
class PathRecord:
    """One realized trajectory: jump times, endpoints, and jump data.

    `dirs` holds the chart components of the g-unit jump direction at
    the pre-point; replaying pre + length * direction through the
    exponential map must land on the post-point.
    """

    seed: object
    t_end: float
    x0: ChartPoint
    times: np.ndarray        # (m,), strictly increasing
    pre_charts: np.ndarray   # (m,)
    pre_coords: np.ndarray   # (m, n)
    post_charts: np.ndarray  # (m,)
    post_coords: np.ndarray  # (m, n)
    lengths: np.ndarray      # (m,)
    dirs: np.ndarray         # (m, n)

    @property
    def n_jumps(self):
        return len(self.times)

    def end_point(self):
        if self.n_jumps == 0:
            return self.x0
        return ChartPoint(int(self.post_charts[-1]), self.post_coords[-1].copy())


def _draw_schedule(rng, lam, t_end, n, alpha, eps, s_cap):
    """All randomness of one path, in the contract order."""
    times, sph, lens = [], [], []
    t = rng.exponential(1.0 / lam)
    while t <= t_end:
        times.append(t)
        sph.append(_unit_sphere(rng, n))
        lens.append(_lengths_from_uniforms(rng.random(), alpha, eps, s_cap))
        t += rng.exponential(1.0 / lam)
    return times, sph, lens


def simulate_path(model, x0, cfg, rng=None, path_index=0, h=None):
    """Run one jump path from x0 over [0, t_end].

    With `rng=None` the path draws from the (cfg.seed, path_index)
    substream, which is how ensemble runs address their members.
    """
    seed_key = None
    if rng is None:
        seed_key = (cfg.seed, path_index)
        rng = np.random.default_rng(seed_key)
    s_cap = resolve_cap(model, cfg)
    lam = jump_rate(model, cfg, s_cap)
    times, sph, lens = _draw_schedule(rng, lam, cfg.t_end, model.dim,
                                      cfg.alpha, cfg.eps, s_cap)
    n = model.dim
    m = len(times)
    pre_c = np.empty(m, dtype=int)
    pre_x = np.empty((m, n))
    post_c = np.empty(m, dtype=int)
    post_x = np.empty((m, n))
    dirs = np.empty((m, n))
    here = x0
    for j in range(m):
        frame = orthonormal_frame(model, here.chart, here.coords[None])[0]
        v = frame @ sph[j]
        pre_c[j], pre_x[j], dirs[j] = here.chart, here.coords, v
        state = make_state(model, [here.chart], here.coords[None], v[None])
        rk4_to(model, state, [lens[j]], h if h is not None else _default_h(model))
        here = make_point(model, int(state.chart[0]), state.x[0])
        post_c[j], post_x[j] = here.chart, here.coords
    return PathRecord(seed_key, cfg.t_end, x0, np.asarray(times, dtype=float),
                      pre_c, pre_x, post_c, post_x,
                      np.asarray(lens, dtype=float), dirs)


def _default_h(model):
    # flat charts integrate exactly at any step size, so one substep per
    # jump; curved ones keep the conservative flow default
    from .flow import DEFAULT_STEP

    if type(model).__name__ == "FlatTorus":
        return 1.0e6
    return DEFAULT_STEP


def replay_path(model, record, h=None):
    """Re-integrate every jump of a record; worst endpoint error (ambient)."""
    if record.n_jumps == 0:
        return 0.0
    state = make_state(model, record.pre_charts, record.pre_coords, record.dirs)
    rk4_to(model, state, record.lengths, h if h is not None else _default_h(model))
    err = 0.0
    for c in np.unique(state.chart):
        idx = state.chart == c
        got = model.embed(int(c), state.x[idx])
        want = np.empty_like(got)
        for j, k in enumerate(np.nonzero(idx)[0]):
            want[j] = model.embed(int(record.post_charts[k]),
                                  record.post_coords[k][None])[0]
        err = max(err, float(np.max(np.linalg.norm(got - want, axis=-1))))
    return err


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Endpoints of an ensemble of paths started at a common point."""

    charts: np.ndarray    # (N,)
    coords: np.ndarray    # (N, n)
    n_jumps: np.ndarray   # (N,)
    s_cap: float
    rate: float


def run_ensemble(model, x0, cfg, t_end=None, n_paths=None, h=None):
    """Endpoints X_{t_end} for n_paths independent paths from x0.

    Randomness is drawn per path from its (seed, index) substream in the
    `simulate_path` order; the geodesic integration is then batched in
    rounds (round r advances every path that has an r-th jump), which is
    where the time goes for large ensembles.
    """
    if t_end is None:
        t_end = cfg.t_end
    if n_paths is None:
        n_paths = cfg.n_paths
    s_cap = resolve_cap(model, cfg)
    lam = jump_rate(model, cfg, s_cap)
    n = model.dim
    if h is None:
        h = _default_h(model)

    schedules = []
    for i in range(n_paths):
        rng = np.random.default_rng((cfg.seed, i))
        _, sph, lens = _draw_schedule(rng, lam, t_end, n, cfg.alpha, cfg.eps, s_cap)
        schedules.append((sph, lens))
    counts = np.array([len(s[0]) for s in schedules], dtype=int)

    charts = np.full(n_paths, x0.chart, dtype=int)
    coords = np.tile(x0.coords, (n_paths, 1))
    max_rounds = int(counts.max()) if n_paths else 0
    for r in range(max_rounds):
        act = np.nonzero(counts > r)[0]
        sph = np.array([schedules[i][0][r] for i in act])
        lens = np.array([schedules[i][1][r] for i in act])
        vels = np.empty((act.size, n))
        for c in np.unique(charts[act]):
            sub = charts[act] == c
            frames = orthonormal_frame(model, int(c), coords[act[sub]])
            vels[sub] = np.einsum("pij,pj->pi", frames, sph[sub])
        state = make_state(model, charts[act], coords[act], vels)
        rk4_to(model, state, lens, h)
        charts[act] = state.chart
        coords[act] = state.x
    return EnsembleResult(charts, coords, counts, s_cap, lam)


def empirical_generator(model, u, x, cfg, delta, n_paths=None, h=None):
    """Finite-difference generator estimate (mean u(X_delta) - u(x)) / delta.

    Requires the jump rate times delta to stay below 0.2 so that the
    multi-jump correction stays inside the reported standard error.
    Returns (estimate, std_error).
    """
    s_cap = resolve_cap(model, cfg)
    lam = jump_rate(model, cfg, s_cap)
    if lam * delta >= 0.2:
        raise BadParams(
            f"delta too coarse: rate*delta = {lam * delta:.3g} (need < 0.2)")
    ens = run_ensemble(model, x, cfg, t_end=delta, n_paths=n_paths, h=h)
    vals = eval_field(u, model, ens.charts, ens.coords)
    u0 = float(u(model, x.chart, x.coords[None])[0])
    diff = vals - u0
    est = float(np.mean(diff)) / delta
    se = float(np.std(diff, ddof=1)) / math.sqrt(diff.size) / delta
    return est, se


def bias_bound(model, cfg, hess_bound):
    """Generator error from dropping jumps below eps, against a C^2 field.

    The symmetrized second-order Taylor bound integrates to
    C * |S^(n-1)| * (K2 / 2) * eps^(2 - 2 alpha) / (2 - 2 alpha).
    """
    a2 = 2.0 * cfg.alpha
    c = levy_constant(model.dim, cfg.alpha)
    return c * sphere_area(model.dim) * 0.5 * hess_bound \
        * cfg.eps ** (2.0 - a2) / (2.0 - a2)
