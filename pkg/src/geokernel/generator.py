"""The stable-type nonlocal generator and its decomposition.

For an exponent alpha in (0, 1) the operator acts on smooth u through
geodesic polar coordinates at x:

    A u(x) = C(n, 2a) * pv int_{T_x M} ( u(exp_x w) - u(x) ) |w|^{-n-2a} dw
           = C * int_{S^{n-1}} int_0^inf ( u(exp_x s v) - u(x) ) s^{-1-2a} ds dsigma(v),

with C(n, 2a) = 4^a Gamma(n/2 + a) / ( pi^{n/2} |Gamma(-a)| ), the constant
that makes the flat-space symbol exactly -|xi|^{2a}.  The principal value
is realized by antipodal symmetrization in v, which turns the integrand
into O(s^{1-2a}) near s = 0.

A bump chi of the squared radius (identically 1 below (r/2)^2, vanishing
above r^2/2, r the injectivity floor of the model) splits the operator as

    A = L + (R - c0),        L u = C int chi(s^2) (u circ exp - u) s^{-1-2a},
                             R u = C int a(s) u(exp s v),
                             c0  = C vol(S^{n-1}) int a(s) ds,
    a(s) = (1 - chi(s^2)) s^{-1-2a},

where L sees only the injectivity ball, R is smoothing, and both R and c0
are truncated at the same radius s_max so that (R - c0) kills constants
exactly as evaluated, not just in exact arithmetic.

All operators at a point consume one shared fan: a batch of unit-speed
geodesics fanning out of x over an antipodally closed set of directions,
integrated once through the union of every radial rule's nodes, with the
visited states stored.  Radial rules:

  * near (and the chi-free variant used by the plain operator): graded
    Gauss panels shrinking geometrically toward 0, closed by a
    Gauss-Jacobi panel with weight s^{1-2a} that absorbs the kernel
    singularity exactly;
  * far: uniform Gauss panels from r/2 out to s_max.

The truncation tail of the far field is reported, never silently dropped:
resolve_s_max derives s_max from the requested tail tolerance, caps it at
a configured ceiling, and flags whether the tolerance was actually met.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import roots_jacobi, roots_legendre

from .errors import (
    BadAlpha,
    BadParams,
    ComponentsTooClose,
    ReferencePointDegenerate,
    SingularPairPresent,
    TailNotControlled,
)
from .fields import eval_field
from .flow import make_state, sweep
from .manifolds import orthonormal_frame

__all__ = [
    "GeneratorConfig",
    "levy_constant",
    "smoothstep",
    "cutoff_profile",
    "radial_cutoff",
    "sphere_area",
    "resolve_s_max",
    "FlowFan",
    "build_fan",
    "local_part",
    "remainder_op",
    "far_part",
    "constant_coefficient",
    "apply_generator",
    "truncated_generator",
    "decompose_generator",
    "GeneratorPieces",
    "average_along_flow",
    "FlowAverageResult",
    "spectral_probe",
    "ProbeResult",
    "alternating_component",
    "fit_loglog",
    "PartitionOptions",
    "Partition",
    "partition_builder",
    "weighted_remainder",
    "split_remainder",
    "standard_fan",
    "near_rule",
    "far_rule",
    "window_rule",
    "angular_rule",
]


@dataclass(frozen=True)
class GeneratorConfig:
    """Quadrature and truncation budget for the generator at a point.

    The defaults suit order-one geometry; the angular count must be even
    so the direction set is antipodally closed.  `s_max=None` derives the
    truncation radius from `tol_tail` (capped at `s_max_cap`); a concrete
    value pins it.
    """

    alpha: float = 0.5
    n_angular: int = 32          # directions on a surface (even)
    n_polar: int = 8             # polar Gauss count in dimension 3
    n_azimuth: int = 8           # azimuth count in dimension 3 (even)
    s_max: float | None = None
    tol_tail: float = 1.0e-4
    s_max_cap: float = 6000.0
    taper_len: float = 0.0       # smooth far-edge roll-off width (0 = sharp cut)
    panel_len: float = 0.25      # far panel length
    nodes_per_panel: int = 5
    near_panels: int = 11        # graded panels below the cutoff radius
    near_nodes: int = 4
    near_ratio: float = 1.15
    closing_nodes: int = 8       # Gauss-Jacobi nodes on the closing panel
    step_near: float = 5.0e-3
    step_far: float = 2.0e-2

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise BadAlpha(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_angular % 2 or self.n_angular < 4:
            raise BadParams("n_angular must be even and at least 4")
        if self.n_azimuth % 2 or self.n_azimuth < 4:
            raise BadParams("n_azimuth must be even and at least 4")
        if self.panel_len <= 0 or self.nodes_per_panel < 2:
            raise BadParams("far panels need positive length and >= 2 nodes")
        if self.s_max is not None and self.s_max <= 0:
            raise BadParams("s_max must be positive when given")


def levy_constant(n, alpha):
    """Normalization making the flat symbol of the operator -|xi|^{2 alpha}."""
    if not 0.0 < alpha < 1.0:
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    return 4.0**alpha * gamma_fn(n / 2.0 + alpha) / (
        math.pi ** (n / 2.0) * abs(gamma_fn(-alpha))
    )


def smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, strictly rising between."""
    t = np.asarray(t, dtype=float)
    lo = t <= 0.0
    hi = t >= 1.0
    mid = ~(lo | hi)
    out = np.where(hi, 1.0, 0.0)
    tm = np.clip(t, 1e-12, 1.0 - 1e-12)
    f = np.exp(-1.0 / tm)
    fc = np.exp(-1.0 / (1.0 - tm))
    out = np.where(mid, f / (f + fc), out)
    return out if out.shape else float(out)


def cutoff_profile(t, r_inj):
    """chi on the squared radius: 1 below (r/2)^2, 0 above r^2/2."""
    lo = r_inj**2 / 4.0
    hi = r_inj**2 / 2.0
    return 1.0 - smoothstep((np.asarray(t, dtype=float) - lo) / (hi - lo))


def radial_cutoff(s, alpha, r_inj):
    """a(s) = (1 - chi(s^2)) s^{-1-2 alpha}, supported on s > r/2."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > r_inj / 2.0
    sp = s[pos]
    out[pos] = (1.0 - cutoff_profile(sp**2, r_inj)) * sp ** (-1.0 - 2.0 * alpha)
    return out if out.shape else float(out)


def sphere_area(n):
    """Surface measure of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / gamma_fn(n / 2.0)


def resolve_s_max(model, cfg):
    """Truncation radius, its tail coefficient, and whether the tail is met.

    The dropped far tail is bounded by  coeff * sup|u|  with
    coeff = C vol(S^{n-1}) s_max^{-2 alpha} / (2 alpha).
    """
    c = levy_constant(model.dim, cfg.alpha)
    vol = sphere_area(model.dim)
    two_a = 2.0 * cfg.alpha

    def coeff(s):
        return c * vol * s ** (-two_a) / two_a

    if cfg.s_max is not None:
        s = float(cfg.s_max)
        return s, coeff(s), bool(coeff(s) <= cfg.tol_tail)
    s_want = (c * vol / (two_a * cfg.tol_tail)) ** (1.0 / two_a)
    s = min(s_want, cfg.s_max_cap)
    s = max(s, model.r_inj)      # never truncate inside the cutoff support
    return s, coeff(s), bool(s_want <= cfg.s_max_cap)


# ---------------------------------------------------------------------------
# quadrature rules
# ---------------------------------------------------------------------------


def _gl_panels(edges, m):
    """Composite Gauss-Legendre nodes/weights over consecutive panels."""
    t, w = roots_legendre(m)
    lo = edges[:-1, None]
    hi = edges[1:, None]
    s = (0.5 * (hi - lo) * (t + 1.0) + lo).ravel()
    ww = (0.5 * (hi - lo) * w).ravel()
    return s, ww


def near_rule(alpha, r_inj, cfg, upper=None, with_chi=True):
    """Nodes and effective weights for the singular near integral.

    Computes int_0^upper  F(s) * [chi(s^2)] * s^{-1-2a} ds  as sum w_i F(s_i):
    graded Gauss panels down to a closing Gauss-Jacobi panel whose weight
    s^{1-2a} soaks up the singularity against F(s)/s^2 (F vanishes to
    second order at 0 after antipodal symmetrization).
    """
    r_cut = upper if upper is not None else r_inj / math.sqrt(2.0)
    edges = r_cut * cfg.near_ratio ** (-np.arange(cfg.near_panels + 1, dtype=float))
    edges = edges[::-1]
    s_gl, w_gl = _gl_panels(edges, cfg.near_nodes)
    factor = s_gl ** (-1.0 - 2.0 * alpha)
    if with_chi:
        factor = factor * cutoff_profile(s_gl**2, r_inj)
    w_eff = w_gl * factor

    b = edges[0]
    t, w_j = roots_jacobi(cfg.closing_nodes, 0.0, 1.0 - 2.0 * alpha)
    s_cl = b * (t + 1.0) / 2.0
    w_cl = w_j * (b / 2.0) ** (2.0 - 2.0 * alpha) / s_cl**2
    # chi is identically 1 on the closing panel (it ends well below r/2)
    s = np.concatenate([s_cl, s_gl])
    w = np.concatenate([w_cl, w_eff])
    order = np.argsort(s)
    return s[order], w[order]


def far_rule(alpha, r_inj, s_max, cfg):
    """Far nodes with two weight sets: against a(s) and against s^{-1-2a}.

    A positive cfg.taper_len rolls both weight sets smoothly to zero over
    the last taper_len of the range instead of cutting sharply at s_max.
    A sharp cut leaves an O(k^{-3/2}) oscillatory imprint on eigenvalue
    sequences; decay-rate studies need the smooth edge.
    """
    lo = r_inj / 2.0
    if s_max <= lo:
        raise BadParams(f"s_max={s_max} does not reach past the cutoff radius {lo}")
    n_panels = max(1, math.ceil((s_max - lo) / cfg.panel_len))
    edges = np.linspace(lo, s_max, n_panels + 1)
    s, w_gl = _gl_panels(edges, cfg.nodes_per_panel)
    if cfg.taper_len > 0.0:
        if cfg.taper_len >= s_max - lo:
            raise BadParams("taper_len must leave an untapered range past the cutoff")
        w_gl = w_gl * (1.0 - smoothstep((s - (s_max - cfg.taper_len)) / cfg.taper_len))
    w_a = w_gl * radial_cutoff(s, alpha, r_inj)
    w_pow = w_gl * s ** (-1.0 - 2.0 * alpha)
    return s, w_a, w_pow


def window_rule(alpha, eps, cap, cfg):
    """Plain power-kernel rule on [eps, cap] (no principal value needed)."""
    if not 0.0 < eps < cap:
        raise BadParams(f"need 0 < eps < cap, got ({eps}, {cap})")
    edges = [eps]
    while edges[-1] * 1.25 < min(cap, eps + cfg.panel_len):
        edges.append(edges[-1] * 1.25)
    while edges[-1] + cfg.panel_len < cap:
        edges.append(edges[-1] + cfg.panel_len)
    edges.append(cap)
    s, w_gl = _gl_panels(np.asarray(edges), cfg.nodes_per_panel)
    return s, w_gl * s ** (-1.0 - 2.0 * alpha)


def angular_rule(model, chart, coords, cfg):
    """Antipodally closed direction set with surface-measure weights."""
    frame = orthonormal_frame(model, chart, np.asarray(coords, dtype=float)[None])[0]
    n = model.dim
    if n == 2:
        nb = cfg.n_angular
        ang = 2.0 * math.pi * np.arange(nb) / nb
        dirs = np.cos(ang)[:, None] * frame[:, 0] + np.sin(ang)[:, None] * frame[:, 1]
        w = np.full(nb, 2.0 * math.pi / nb)
        anti = (np.arange(nb) + nb // 2) % nb
        return dirs, w, anti
    if n == 3:
        t, wt = roots_legendre(cfg.n_polar)
        phi = 2.0 * math.pi * np.arange(cfg.n_azimuth) / cfg.n_azimuth
        tt, pp = np.meshgrid(t, phi, indexing="ij")
        st = np.sqrt(1.0 - tt**2)
        dirs = (
            tt.ravel()[:, None] * frame[:, 0]
            + (st * np.cos(pp)).ravel()[:, None] * frame[:, 1]
            + (st * np.sin(pp)).ravel()[:, None] * frame[:, 2]
        )
        w = np.repeat(wt, cfg.n_azimuth) * (2.0 * math.pi / cfg.n_azimuth)
        it, ip = np.meshgrid(np.arange(cfg.n_polar), np.arange(cfg.n_azimuth), indexing="ij")
        anti = (
            (cfg.n_polar - 1 - it) * cfg.n_azimuth
            + (ip + cfg.n_azimuth // 2) % cfg.n_azimuth
        ).ravel()
        return dirs, w, anti
    raise BadParams(f"no angular rule for dimension {n}")


# ---------------------------------------------------------------------------
# the fan
# ---------------------------------------------------------------------------


class FlowFan:
    """A reusable fan of geodesics out of one point, sampled on rule nodes.

    `rules` maps a rule name to (row_indices, weights): row i of `charts`
    and `coords` holds the batch state at schedule radius s_nodes[i].
    """

    def __init__(self, model, base, cfg, dirs, ang_w, anti, s_nodes, charts, coords, rules, meta):
        self.model = model
        self.base = base
        self.cfg = cfg
        self.dirs = dirs
        self.ang_w = ang_w
        self.anti = anti
        self.s_nodes = s_nodes
        self.charts = charts
        self.coords = coords
        self.rules = rules
        self.meta = meta

    @property
    def n_dirs(self):
        return self.dirs.shape[0]

    def values(self, test_field):
        """Field values on every stored node, shape (n_nodes, n_dirs)."""
        flat = eval_field(
            test_field, self.model, self.charts.ravel(), self.coords.reshape(-1, self.model.dim)
        )
        return flat.reshape(self.charts.shape)

    def value_at_base(self, test_field):
        return float(test_field(self.model, self.base.chart, self.base.coords[None])[0])

    def symmetrized(self, values, u0):
        """Antipodally symmetrized increments (u(exp sv)+u(exp -sv))/2 - u(x)."""
        return 0.5 * (values + values[:, self.anti]) - u0


def build_fan(model, x, cfg, rule_specs):
    """Integrate the fan once through the union of all rule nodes.

    `rule_specs` maps names to (s_values, weights); the returned fan's
    `rules` point into the shared schedule.
    """
    names = list(rule_specs)
    lengths = [len(rule_specs[k][0]) for k in names]
    all_s = np.concatenate([np.asarray(rule_specs[k][0], dtype=float) for k in names])
    order = np.argsort(all_s, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    s_sched = all_s[order]

    rules = {}
    off = 0
    for k, ln in zip(names, lengths):
        rules[k] = (rank[off : off + ln], np.asarray(rule_specs[k][1], dtype=float))
        off += ln

    dirs, ang_w, anti = angular_rule(model, x.chart, x.coords, cfg)
    nb = dirs.shape[0]
    m = len(s_sched)
    charts = np.empty((m, nb), dtype=int)
    coords = np.empty((m, nb, model.dim))

    state = make_state(
        model,
        np.full(nb, x.chart, dtype=int),
        np.broadcast_to(x.coords, (nb, model.dim)),
        dirs,
    )

    def snap(offset):
        def fn(i, _s, st):
            charts[offset + i] = st.chart
            coords[offset + i] = st.x
        return fn

    split = int(np.searchsorted(s_sched, model.r_inj, side="right"))
    if split > 0:
        sweep(model, state, s_sched[:split], cfg.step_near, on_node=snap(0))
    if split < m:
        s_start = s_sched[split - 1] if split > 0 else 0.0
        sweep(
            model, state, s_sched[split:], cfg.step_far,
            on_node=snap(split), s_start=s_start,
        )

    s_max, tail_coeff, controlled = resolve_s_max(model, cfg)
    meta = {
        "alpha": cfg.alpha,
        "r_inj": model.r_inj,
        "s_max": s_max,
        "tail_coeff": tail_coeff,
        "tail_controlled": controlled,
        "n_dirs": nb,
        "n_nodes": m,
    }
    return FlowFan(model, x, cfg, dirs, ang_w, anti, s_sched, charts, coords, rules, meta)


def standard_fan(model, x, cfg, extra_rules=None):
    """Fan carrying the near, chi-free near, and far rules at x."""
    s_max, _, _ = resolve_s_max(model, cfg)
    sn, wn = near_rule(cfg.alpha, model.r_inj, cfg)
    sa, wa = near_rule(cfg.alpha, model.r_inj, cfg, upper=model.r_inj / 2.0, with_chi=False)
    sf, w_far_a, w_far_pow = far_rule(cfg.alpha, model.r_inj, s_max, cfg)
    specs = {
        "near": (sn, wn),
        "apply_near": (sa, wa),
        "far": (sf, w_far_a),
        "apply_far": (sf, w_far_pow),
    }
    if extra_rules:
        specs.update(extra_rules)
    fan = build_fan(model, x, cfg, specs)
    # far and apply_far share nodes; alias the rows to the same schedule slots
    fan.rules["apply_far"] = (fan.rules["far"][0], fan.rules["apply_far"][1])
    return fan


# ---------------------------------------------------------------------------
# operators at a point
# ---------------------------------------------------------------------------


def _contract(fan, rule, values):
    rows, w = fan.rules[rule]
    return float(np.einsum("m,mb,b->", w, values[rows], fan.ang_w))


def local_part(model, x, test_field, cfg=None, fan=None):
    """The chi-localized singular piece at x."""
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    u0 = fan.value_at_base(test_field)
    sym = fan.symmetrized(fan.values(test_field), u0)
    c = levy_constant(model.dim, cfg.alpha)
    return c * _contract(fan, "near", sym)


def remainder_op(model, x, test_field, cfg=None, fan=None):
    """The smoothing average R u(x) = C int a(s) u(exp s v)."""
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    vals = fan.values(test_field)
    c = levy_constant(model.dim, cfg.alpha)
    return c * _contract(fan, "far", vals)


def constant_coefficient(model, cfg=None):
    """c0 = C vol(S^{n-1}) int a(s) ds with the far rule's truncation."""
    cfg = cfg or GeneratorConfig()
    s_max, _, _ = resolve_s_max(model, cfg)
    _s, w_a, _w = far_rule(cfg.alpha, model.r_inj, s_max, cfg)
    c = levy_constant(model.dim, cfg.alpha)
    return c * sphere_area(model.dim) * float(np.sum(w_a))


def far_part(model, x, test_field, cfg=None, fan=None):
    """(R - c0) u at x, evaluated so constants cancel exactly nodewise."""
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    u0 = fan.value_at_base(test_field)
    vals = fan.values(test_field) - u0
    c = levy_constant(model.dim, cfg.alpha)
    return c * _contract(fan, "far", vals)


def apply_generator(model, x, test_field, cfg=None, fan=None):
    """A u(x) through the operator's own split at r/2 (no bump involved)."""
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    vals = fan.values(test_field)
    u0 = fan.value_at_base(test_field)
    sym = fan.symmetrized(vals, u0)
    c = levy_constant(model.dim, cfg.alpha)
    near = _contract(fan, "apply_near", sym)
    far = _contract(fan, "apply_far", vals - u0)
    return c * (near + far)


def truncated_generator(model, x, test_field, eps, cap, cfg=None, fan=None):
    """The jump-window generator C int_eps^cap (u circ exp - u) s^{-1-2a}."""
    cfg = cfg or GeneratorConfig()
    if fan is None or "window" not in fan.rules:
        sw, ww = window_rule(cfg.alpha, eps, cap, cfg)
        fan = build_fan(model, x, cfg, {"window": (sw, ww)})
    vals = fan.values(test_field)
    u0 = fan.value_at_base(test_field)
    c = levy_constant(model.dim, cfg.alpha)
    return c * _contract(fan, "window", vals - u0)


@dataclass
class GeneratorPieces:
    """The decomposition of A u(x) with its internal consistency gap."""

    local: float
    far: float
    remainder: float
    c0: float
    total: float          # local + far
    direct: float         # the operator through its own split
    gap: float            # |direct - total|
    meta: dict


def decompose_generator(model, x, test_field, cfg=None, fan=None):
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    loc = local_part(model, x, test_field, cfg, fan)
    far = far_part(model, x, test_field, cfg, fan)
    rem = remainder_op(model, x, test_field, cfg, fan)
    c0 = constant_coefficient(model, cfg)
    direct = apply_generator(model, x, test_field, cfg, fan)
    total = loc + far
    return GeneratorPieces(
        local=loc,
        far=far,
        remainder=rem,
        c0=c0,
        total=total,
        direct=direct,
        gap=abs(direct - total),
        meta=dict(fan.meta),
    )


@dataclass
class FlowAverageResult:
    """A normalized far-field average with its certified tail."""

    value: float
    tail_bound: float
    tail_controlled: bool
    s_max: float


def average_along_flow(model, x, test_field, cfg=None, fan=None):
    """Mean of u under the normalized far jump density a(s) ds dsigma / Z.

    The tail bound needs a sup bound for the field; fields without one
    cannot be certified and raise TailNotControlled unless the config
    pinned s_max explicitly.
    """
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    sup = getattr(test_field, "sup_bound", None)
    if sup is None and cfg.s_max is None:
        raise TailNotControlled(
            "field carries no sup bound and no explicit s_max was set; "
            "the dropped tail cannot be certified"
        )
    rem = remainder_op(model, x, test_field, cfg, fan)
    c0 = constant_coefficient(model, cfg)
    tail = fan.meta["tail_coeff"] * (sup if sup is not None else math.nan)
    return FlowAverageResult(
        value=rem / c0,
        tail_bound=float(tail),
        tail_controlled=bool(fan.meta["tail_controlled"]),
        s_max=fan.meta["s_max"],
    )


# ---------------------------------------------------------------------------
# spectral probing
# ---------------------------------------------------------------------------


@dataclass
class ProbeResult:
    freqs: np.ndarray
    op_values: np.ndarray
    base_values: np.ndarray
    ratios: np.ndarray
    mode: str
    fit_freqs: np.ndarray
    fit_values: np.ndarray
    slope: float
    intercept: float
    meta: dict


def alternating_component(values):
    """Half the signed second difference, (-1)^j (v_j - (v_{j-1}+v_{j+1})/2) / 2.

    For a sequence that is a smooth trend plus a parity-alternating part,
    this recovers the alternating amplitude and wipes the trend to second
    order.  Endpoints are dropped.
    """
    v = np.asarray(values, dtype=float)
    j = np.arange(1, len(v) - 1)
    return (-1.0) ** j * (v[1:-1] - 0.5 * (v[:-2] + v[2:])) / 2.0


def fit_loglog(freqs, values, lo, hi):
    """Least-squares slope/intercept of log|values| against log freqs in [lo, hi]."""
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (freqs >= lo) & (freqs <= hi) & (np.abs(values) > 0)
    if keep.sum() < 2:
        raise BadParams("fewer than two usable points in the fit window")
    lx = np.log(freqs[keep])
    ly = np.log(np.abs(values[keep]))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept), freqs[keep], values[keep]


def spectral_probe(model, x, fields, fit_window, cfg=None, op="remainder", mode="raw", psi=None):
    """Frequency response of an operator piece at a reference point.

    Evaluates the chosen piece on each field, forms pointwise ratios
    against the field's value at x (which must stay away from zero:
    |u(x)| >= sup/2, else ReferencePointDegenerate), and fits a log-log
    line over the requested frequency window, either on the raw ratios or
    on their alternating component.  `psi` restricts the smoothing piece:
    a (Partition, index) pair selects one weight (index 0 = background),
    valid only with op="remainder".
    """
    cfg = cfg or GeneratorConfig()
    fan = standard_fan(model, x, cfg)
    weight_rows = None
    if psi is not None:
        if op != "remainder":
            raise BadParams("a partition weight only applies to the smoothing piece")
        partition, k = psi
        weight_rows = partition.fan_weights(fan)[k]
    op_fn = {
        "remainder": remainder_op,
        "apply": apply_generator,
        "local": local_part,
        "far": far_part,
    }.get(op)
    if op_fn is None:
        raise BadParams(f"unknown operator piece {op!r}")

    freqs = np.array([f.freq_index for f in fields], dtype=float)
    op_vals = np.empty(len(fields))
    base_vals = np.empty(len(fields))
    for i, f in enumerate(fields):
        u0 = fan.value_at_base(f)
        if abs(u0) < 0.5 * f.sup_bound:
            raise ReferencePointDegenerate(
                f"|{f.name}(x)| = {abs(u0):.3g} is below half its sup bound "
                f"{f.sup_bound:.3g}; pick a reference point on a crest"
            )
        base_vals[i] = u0
        if weight_rows is not None:
            op_vals[i] = weighted_remainder(model, x, f, weight_rows, cfg, fan)
        else:
            op_vals[i] = op_fn(model, x, f, cfg, fan)
    ratios = op_vals / base_vals

    if mode == "raw":
        slope, intercept, ff, fv = fit_loglog(freqs, ratios, *fit_window)
    elif mode == "alternating":
        order = np.argsort(freqs)
        alt = alternating_component(ratios[order])
        alt_f = freqs[order][1:-1]
        slope, intercept, ff, fv = fit_loglog(alt_f, alt, *fit_window)
    else:
        raise BadParams(f"unknown probe mode {mode!r}")

    return ProbeResult(
        freqs=freqs,
        op_values=op_vals,
        base_values=base_vals,
        ratios=ratios,
        mode=mode,
        fit_freqs=ff,
        fit_values=fv,
        slope=slope,
        intercept=intercept,
        meta=dict(fan.meta),
    )


# ---------------------------------------------------------------------------
# partitions over conjugate components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionOptions:
    margin: float = 0.5       # scan-metric reach of each component weight
    thin: float = 0.02        # snap resolution for cloud thinning
    forbid_unstable: bool = True


def _pair_features(model, chart, coords, vels):
    """Chart-free features of (point, direction): embedded x and pushed v."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    vels = np.atleast_2d(np.asarray(vels, dtype=float))
    if coords.shape[0] == 1 and vels.shape[0] > 1:
        coords = np.broadcast_to(coords, (vels.shape[0], coords.shape[1]))
    p = model.embed(chart, coords)
    j = model.embed_jac(chart, coords)
    dv = np.einsum("...mi,...i->...m", j, vels)
    return np.concatenate([p, dv], axis=-1)


class Partition:
    """Normalized weights over conjugate components plus a background.

    Weight k is a smooth bump of the scan-metric distance to component
    k's cloud of (x, v, s*) records: identically 1 within margin/2,
    vanishing beyond margin.  The background is the product of the
    complements, and the family is normalized pointwise, so the weights
    sum to 1 identically.
    """

    def __init__(self, model, clouds, margin):
        self.model = model
        self.margin = margin
        # each cloud: (features (P, 2m), radii (P,)), sorted by radius
        self.clouds = clouds

    @property
    def n_components(self):
        return len(self.clouds)

    def weights_on_rays(self, base, dirs, s_values):
        """All weights along a fan: rows (background, comp 0, ..., comp K-1).

        `dirs` are chart components at the base point; the result has
        shape (K+1, len(s_values), len(dirs)).
        """
        feats = _pair_features(self.model, base.chart, base.coords, dirs)
        nq, nm = feats.shape[0], len(s_values)
        out = np.empty((self.n_components + 1, nm, nq))
        s_values = np.asarray(s_values, dtype=float)
        for k in range(self.n_components):
            feat_c, s_c = self.clouds[k]
            # pairwise feature distances once per component; radii broadcast
            d2f = np.sum((feats[:, None, :] - feat_c[None, :, :]) ** 2, axis=-1)
            for i, s in enumerate(s_values):
                keep = (s_c >= s - self.margin) & (s_c <= s + self.margin)
                if not np.any(keep):
                    out[k + 1, i] = 0.0
                    continue
                d = np.sqrt((d2f[:, keep] + (s - s_c[keep]) ** 2).min(axis=1))
                half = self.margin / 2.0
                out[k + 1, i] = 1.0 - smoothstep((d - half) / half)
        out[0] = np.prod(1.0 - out[1:], axis=0)
        out /= out.sum(axis=0)
        return out

    def fan_weights(self, fan):
        """Weights on a fan's smoothing rule, shape (K+1, n_far_nodes, n_dirs)."""
        rows, _ = fan.rules["far"]
        return self.weights_on_rays(fan.base, fan.dirs, fan.s_nodes[rows])

    def min_component_gap(self):
        """Smallest scan-metric distance between records of distinct components."""
        gap = math.inf
        for a in range(self.n_components):
            fa, sa = self.clouds[a]
            qa = np.concatenate([fa, sa[:, None]], axis=-1)
            for b in range(a + 1, self.n_components):
                fb, sb = self.clouds[b]
                qb = np.concatenate([fb, sb[:, None]], axis=-1)
                d2 = np.sum((qa[:, None, :] - qb[None, :, :]) ** 2, axis=-1)
                gap = min(gap, math.sqrt(d2.min()))
        return gap


def partition_builder(model, records, opts=None):
    """Build the component weights from scan records.

    Raises SingularPairPresent when a record is flagged unstable (and the
    options forbid that) and ComponentsTooClose when two components come
    within twice the margin, where their weights could overlap.
    """
    opts = opts or PartitionOptions()
    if not records:
        # nothing conjugate in range: the background weight is everything
        return Partition(model, [], opts.margin)
    if opts.forbid_unstable and any(getattr(r, "stable", True) is False for r in records):
        raise SingularPairPresent(
            "scan contains unstable conjugate pairs; classify and drop them first"
        )
    labels = sorted({r.component for r in records})
    if labels and labels[0] < 0:
        raise BadParams("records carry no component labels; run the scan labeling")
    clouds = []
    for lab in labels:
        rows = [r for r in records if r.component == lab]
        feats = np.concatenate(
            [
                _pair_features(model, r.base_chart, r.base_coords[None], r.direction[None])
                for r in rows
            ],
            axis=0,
        )
        radii = np.array([r.s_star for r in rows])
        # thin near-duplicates on a snap grid to keep distance scans cheap
        key = np.round(
            np.concatenate([feats, radii[:, None]], axis=-1) / opts.thin
        ).astype(np.int64)
        _, keep = np.unique(key, axis=0, return_index=True)
        keep.sort()
        order = np.argsort(radii[keep], kind="stable")
        clouds.append((feats[keep][order], radii[keep][order]))
    part = Partition(model, clouds, opts.margin)
    if part.n_components > 1:
        gap = part.min_component_gap()
        if gap < 2.0 * opts.margin:
            raise ComponentsTooClose(
                f"components are {gap:.4f} apart in the scan metric; "
                f"weights of margin {opts.margin} would overlap"
            )
    return part


def weighted_remainder(model, x, test_field, weight_rows, cfg=None, fan=None):
    """Far average against one partition weight: C int a(s) psi u (exp s v).

    `weight_rows` must be the weight evaluated on the fan's far rule rows,
    shape (n_far_nodes, n_dirs); build it with Partition.weights_on_rays
    over fan.s_nodes[far rows].
    """
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    rows, w = fan.rules["far"]
    vals = fan.values(test_field)[rows]
    c = levy_constant(model.dim, cfg.alpha)
    return c * float(np.einsum("m,mb,mb,b->", w, weight_rows, vals, fan.ang_w))


def split_remainder(model, x, test_field, partition, cfg=None, fan=None):
    """Remainder evaluated piecewise: (background, comp 0, ..., comp K-1).

    The rows sum to the unsplit remainder_op exactly, because the weights
    sum to 1 identically on the quadrature nodes.
    """
    cfg = cfg or GeneratorConfig()
    fan = fan or standard_fan(model, x, cfg)
    wts = partition.fan_weights(fan)
    return np.array(
        [weighted_remainder(model, x, test_field, wk, cfg, fan) for wk in wts]
    )
