"""Jacobi fields, conjugate point detection, and conjugate-pair atlases.

Along a unit-speed geodesic we carry a parallel orthonormal frame whose
first leg is the velocity, and integrate the matrix Jacobi problem

    D'' + R D = 0,      D(0) = 0,  D'(0) = I,

in the components of the perpendicular legs; R is the curvature operator
w -> R(w, gammadot) gammadot restricted to the normal space.  The normal
block of the differential of the exponential map at radius s is then
N(s) = D(s) / s, an (n-1) x (n-1) matrix whose rank drops exactly at
conjugate radii, with the rank deficiency equal to the multiplicity.

Detection walks the geodesic once, sampling det N and the smallest
singular value of N on a fixed grid and saving restart states.  A sign
change of det N brackets an odd-multiplicity radius and is polished by
root bracketing on det N; a local dip of sigma_min without a sign change
indicates even multiplicity and is polished by bisecting the sign of the
(one-sided) slope of sigma_min, which is robust against the corner that
sigma_min has at a double zero.  Every polishing evaluation re-integrates
from the nearest saved state with a finer step, so the advertised radii
do not inherit the coarse grid spacing.

The scan driver runs a whole grid of base points and directions as one
batch, labels the found pairs into connected components (adjacent grid
cells, same multiplicity, nearby radii) and can round-trip the result
through a plain CSV file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BadParams, InsufficientResolution, NotConjugate
from .flow import make_state, rk4_to, sweep
from .manifolds import orthonormal_frame

__all__ = [
    "ConjugacyConfig",
    "ConjugateRecord",
    "PairClassification",
    "ScanResult",
    "jacobi_state",
    "jacobi_rhs",
    "propagate_jacobi",
    "find_conjugate_pairs",
    "transversality_slope",
    "classify_pair",
    "conjugate_scan",
    "atlas_to_csv",
    "atlas_from_csv",
]


@dataclass(frozen=True)
class ConjugacyConfig:
    """Knobs for detection, polishing and scanning."""

    ds_check: float = 0.02      # sampling grid along the geodesic
    step: float = 2.0e-3        # integrator step for the main sweep
    step_fine: float = 2.0e-4   # integrator step while polishing
    sigma_dip: float = 0.1      # sigma_min below this flags an even candidate
    tol_zero: float = 1.0e-6    # singular values below tol*scale count as zero
    merge_tol: float = 1.0e-5   # radii closer than this are one point
    slope_delta: float = 1.0e-4 # central difference step for transversality
    samples: int = 8            # perturbed geodesics for classification
    neighborhood_radius: float = 1.0e-2
    match_window: float = 0.25  # radius window a perturbed pair must land in
    slope_min: float = 1.0e-3   # transversality threshold
    s_adjacent: float = 0.15    # radius gap for scan component gluing
    seed: int = 0


@dataclass
class ConjugateRecord:
    """One conjugate radius along one geodesic."""

    s_star: float
    order: int
    base_chart: int
    base_coords: np.ndarray
    direction: np.ndarray
    kernel: np.ndarray | None = None        # (n-1, order), frame components
    chart: int | None = None                # endpoint data, when polished exactly
    coords: np.ndarray | None = None
    velocity: np.ndarray | None = None
    frame: np.ndarray | None = None         # parallel frame columns at s_star
    dmat: np.ndarray | None = None          # D(s_star)
    dpmat: np.ndarray | None = None         # D'(s_star)
    component: int = -1
    base_index: int = -1
    dir_index: int = -1
    stable: bool | None = None               # set by classify_pair when requested
    slope: float | None = None               # set by transversality_slope when requested


@dataclass
class PairClassification:
    s_star: float
    order: int
    slope: float                 # d/ds of the vanishing symmetric function
    stable: bool
    sample_radii: np.ndarray
    spread: float


@dataclass
class ScanResult:
    records: list
    base_grid: np.ndarray        # (n_base, n) chart-0 coordinates
    dir_grid: np.ndarray         # (n_base, n_dir, n) unit vectors at each base
    n_components: int
    min_sigma: float             # smallest sigma_min of N seen anywhere
    manifold: str
    params: dict


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def jacobi_rhs(model, chart, x, v, extras, gamma):
    """Rates for the parallel frame and the normal Jacobi blocks."""
    e_full = extras["frame"]
    de = -np.einsum("...kij,...i,...jc->...kc", gamma, v, e_full)
    e_perp = e_full[..., 1:]
    w = np.moveaxis(e_perp, -1, -2)
    act = model.curvature_action(chart, x[..., None, :], v[..., None, :], w)
    g = model.metric(chart, x)
    rt = np.einsum("...ij,...ai,...jb->...ab", g, act, e_perp)
    return {
        "frame": de,
        "D": extras["Dp"],
        "Dp": -np.einsum("...ab,...bc->...ac", rt, extras["D"]),
    }


def jacobi_state(model, chart, x, v):
    """Initial batched state: parallel frame along v, D = 0, D' = I."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    nb, n = x.shape
    frame = orthonormal_frame(model, chart, x, v=v)
    eye = np.broadcast_to(np.eye(n - 1), (nb, n - 1, n - 1)).copy()
    extras = {
        "frame": ("vectors", frame),
        "D": ("none", np.zeros((nb, n - 1, n - 1))),
        "Dp": ("none", eye),
    }
    return make_state(model, np.full(nb, chart, dtype=int), x, v, extras)


def propagate_jacobi(model, vec, s_values, cfg=None):
    """Sample D and D' at the given radii along one geodesic."""
    cfg = cfg or ConjugacyConfig()
    s_values = np.asarray(s_values, dtype=float)
    state = jacobi_state(model, vec.base.chart, vec.base.coords, vec.comps)
    n = model.dim
    d_out = np.empty((len(s_values), n - 1, n - 1))
    dp_out = np.empty_like(d_out)

    def snap(i, _s, st):
        d_out[i] = st.extras["D"][0]
        dp_out[i] = st.extras["Dp"][0]

    sweep(model, state, s_values, cfg.step, on_node=snap, extra_rhs=jacobi_rhs)
    return d_out, dp_out


def _sigma_det(dmat):
    """(det, singular values ascending) of a stack of 1x1 or 2x2 blocks."""
    k = dmat.shape[-1]
    if k == 1:
        a = dmat[..., 0, 0]
        return a, np.abs(a)[..., None]
    if k == 2:
        a, b = dmat[..., 0, 0], dmat[..., 0, 1]
        c, d = dmat[..., 1, 0], dmat[..., 1, 1]
        det = a * d - b * c
        f2 = a * a + b * b + c * c + d * d
        gap = np.sqrt(np.maximum(f2 * f2 - 4.0 * det * det, 0.0))
        s_hi = np.sqrt(np.maximum((f2 + gap) / 2.0, 0.0))
        s_lo = np.sqrt(np.maximum((f2 - gap) / 2.0, 0.0))
        return det, np.stack([s_lo, s_hi], axis=-1)
    sv = np.linalg.svd(dmat, compute_uv=False)
    return np.linalg.det(dmat), sv[..., ::-1]


def _schedule(s_max, ds):
    m = max(2, math.ceil(s_max / ds))
    return np.linspace(0.0, s_max, m + 1)


class _Polisher:
    """Re-integrates the Jacobi system from saved states for polishing."""

    def __init__(self, model, cfg, cp_s, cp_states, elem):
        self.model = model
        self.cfg = cfg
        self.cp_s = cp_s
        self.cp_states = cp_states
        self.elem = elem

    def state_at(self, s):
        i = int(np.searchsorted(self.cp_s, s + 1e-15) - 1)
        i = max(i, 0)
        st = self.cp_states[i].take([self.elem])
        gap = s - self.cp_s[i]
        if gap > 1e-14:
            rk4_to(self.model, st, [gap], self.cfg.step_fine, extra_rhs=jacobi_rhs)
        return st

    def normal_block(self, s):
        st = self.state_at(s)
        return st.extras["D"][0] / s

    def det(self, s):
        det, _ = _sigma_det(self.normal_block(s))
        return float(det)

    def sigma_min(self, s):
        _, sv = _sigma_det(self.normal_block(s))
        return float(sv[0])

    def sigma_slope(self, s, delta):
        # both sides advance from the same saved state in one batch
        lo, hi = s - delta, s + delta
        i = int(np.searchsorted(self.cp_s, lo + 1e-15) - 1)
        i = max(i, 0)
        st = self.cp_states[i].take([self.elem, self.elem])
        rk4_to(
            self.model,
            st,
            [lo - self.cp_s[i], hi - self.cp_s[i]],
            self.cfg.step_fine,
            extra_rhs=jacobi_rhs,
        )
        _, sv = _sigma_det(st.extras["D"] / np.array([lo, hi])[:, None, None])
        return (sv[1, 0] - sv[0, 0]) / (2.0 * delta)


def _detect_candidates(s_grid, dets, sigmas, cfg):
    """Bracket indices of candidate conjugate radii from grid samples.

    Returns a list of (kind, i) with the bracket [s_i, s_{i+1}] for 'odd'
    (sign change of det) and the dip node i for 'even'.
    """
    m = len(s_grid)
    sign_change = np.zeros(m, dtype=bool)
    out = []
    for i in range(1, m - 1):
        if dets[i] == 0.0:
            # exact zero on a node: treat as an odd bracket around it
            out.append(("odd", i - 1 if dets[i - 1] * dets[i + 1] < 0 else i))
            sign_change[max(i - 1, 0) : i + 2] = True
    for i in range(1, m - 1):
        if dets[i] * dets[i + 1] < 0.0:
            out.append(("odd", i))
            sign_change[max(i - 1, 0) : min(i + 3, m)] = True
    for i in range(2, m - 1):
        if sign_change[i]:
            continue
        if sigmas[i] >= cfg.sigma_dip:
            continue
        if sigmas[i] < sigmas[i - 1] and sigmas[i] <= sigmas[i + 1]:
            out.append(("even", i))
    out.sort(key=lambda t: t[1])
    return out


def _bisect_slope(pol, lo, hi, delta, iters=48):
    """Locate the corner of sigma_min by bisecting the sign of its slope."""
    f_lo = pol.sigma_slope(lo, delta)
    f_hi = pol.sigma_slope(hi, delta)
    if f_lo > 0 or f_hi < 0:
        # dip without an interior slope change; no conjugate point here
        return None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if hi - lo < 1e-13 * max(1.0, hi):
            break
        if pol.sigma_slope(mid, delta) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_conjugate_pairs(model, vec, s_max, cfg=None):
    """All conjugate radii along the geodesic of `vec` in (0, s_max].

    Returns a list of ConjugateRecord, radii increasing, each polished to
    integrator accuracy and carrying the endpoint state, the Jacobi blocks
    and the kernel of the normal block.
    """
    cfg = cfg or ConjugacyConfig()
    if s_max <= 0:
        raise BadParams("s_max must be positive")
    s_grid = _schedule(s_max, cfg.ds_check)
    m = len(s_grid)
    state = jacobi_state(model, vec.base.chart, vec.base.coords, vec.comps)
    dets = np.empty(m)
    sigmas = np.empty(m)
    cp_states = []

    def snap(i, s, st):
        if i == 0:
            dets[0], sigmas[0] = 1.0, 1.0   # N -> I as s -> 0
        else:
            det, sv = _sigma_det(st.extras["D"][:1] / s)
            dets[i], sigmas[i] = det[0], sv[0, 0]
        cp_states.append(st.copy())

    sweep(model, state, s_grid, cfg.step, on_node=snap, extra_rhs=jacobi_rhs)
    pol = _Polisher(model, cfg, s_grid, cp_states, 0)

    radii = []
    for kind, i in _detect_candidates(s_grid, dets, sigmas, cfg):
        if kind == "odd":
            lo, hi = s_grid[i], s_grid[i + 1]
            s_star = brentq(pol.det, lo, hi, xtol=1e-13, rtol=1e-15)
        else:
            lo, hi = s_grid[i - 1], s_grid[i + 1]
            s_star = _bisect_slope(pol, lo, hi, cfg.slope_delta)
            if s_star is None:
                continue
            # a dip must actually reach zero to count
            if pol.sigma_min(s_star) > cfg.tol_zero * 10 * max(1.0, sigmas.max()):
                continue
        radii.append(float(s_star))

    radii.sort()
    merged = []
    for s in radii:
        if merged and s - merged[-1] < cfg.merge_tol:
            continue
        merged.append(s)

    records = []
    for s_star in merged:
        st = pol.state_at(s_star)
        dmat = st.extras["D"][0]
        nblock = dmat / s_star
        _, sv, vt = np.linalg.svd(nblock)
        scale = 1.0 + sv[0]
        order = int(np.sum(sv < cfg.tol_zero * scale))
        if order == 0:
            # polishing landed on a near-miss; keep the closest direction anyway
            order = 1
        kernel = vt[len(sv) - order :].T
        records.append(
            ConjugateRecord(
                s_star=s_star,
                order=order,
                base_chart=vec.base.chart,
                base_coords=np.asarray(vec.base.coords, dtype=float).copy(),
                direction=np.asarray(vec.comps, dtype=float).copy(),
                kernel=kernel,
                chart=int(st.chart[0]),
                coords=st.x[0].copy(),
                velocity=st.v[0].copy(),
                frame=st.extras["frame"][0].copy(),
                dmat=dmat.copy(),
                dpmat=st.extras["Dp"][0].copy(),
            )
        )
    return records


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def _symmetric_function(model, pol, s, order):
    """e_{n-k+1} of the eigenvalues of the full differential block."""
    n = model.dim
    nblock = pol.normal_block(s)
    full = np.zeros((n, n))
    full[0, 0] = 1.0
    full[1:, 1:] = nblock
    coeffs = np.poly(full)          # leading 1, then +/- elementary symmetrics
    j = n - order + 1
    return float((-1.0) ** j * coeffs[j])


def transversality_slope(model, vec, s_star, order, cfg=None):
    """Slope at s_star of the symmetric eigenvalue function that vanishes there.

    The block of the differential of exp has, at a conjugate radius of
    multiplicity k, exactly k eigenvalues through zero; the elementary
    symmetric function of degree n-k+1 then has a simple zero whose slope
    is (product of nonzero eigenvalues) * (sum of the k eigenvalue
    slopes).  A nonzero value certifies transversal crossing.
    """
    cfg = cfg or ConjugacyConfig()
    s_grid = _schedule(s_star + 2 * cfg.slope_delta + cfg.ds_check, cfg.ds_check)
    state = jacobi_state(model, vec.base.chart, vec.base.coords, vec.comps)
    cp_states = []

    def snap(i, s, st):
        cp_states.append(st.copy())

    sweep(model, state, s_grid, cfg.step, on_node=snap, extra_rhs=jacobi_rhs)
    pol = _Polisher(model, cfg, s_grid, cp_states, 0)
    d = cfg.slope_delta
    f_hi = _symmetric_function(model, pol, s_star + d, order)
    f_lo = _symmetric_function(model, pol, s_star - d, order)
    return (f_hi - f_lo) / (2.0 * d)


def _interp_root(s_grid, vals, i):
    """Root of a cubic through nodes i-1..i+2 inside [s_i, s_{i+1}]."""
    lo = max(i - 1, 0)
    hi = min(i + 3, len(s_grid))
    ss, vv = s_grid[lo:hi], vals[lo:hi]
    coeff = np.polyfit(ss - s_grid[i], vv, len(ss) - 1)
    roots = np.roots(coeff)
    roots = roots[np.abs(roots.imag) < 1e-10].real + s_grid[i]
    inside = roots[(roots >= s_grid[i] - 1e-12) & (roots <= s_grid[i + 1] + 1e-12)]
    if inside.size == 0:
        # fall back to the secant through the bracket
        a, b = vals[i], vals[i + 1]
        return s_grid[i] + (s_grid[i + 1] - s_grid[i]) * a / (a - b)
    return float(inside[0])


def _interp_dip(s_grid, sigmas, i):
    """Vertex of the parabola through sigma^2 at nodes i-1, i, i+1."""
    ss = s_grid[i - 1 : i + 2] - s_grid[i]
    yy = sigmas[i - 1 : i + 2] ** 2
    a, b, _c = np.polyfit(ss, yy, 2)
    if a <= 0:
        return float(s_grid[i])
    return float(s_grid[i] - b / (2.0 * a))


def _detect_interp(s_grid, dets, sigmas, cfg):
    """Grid-interpolated radii and orders, no re-integration (for scans)."""
    out = []
    for kind, i in _detect_candidates(s_grid, dets, sigmas, cfg):
        if kind == "odd":
            s_star = _interp_root(s_grid, dets, i)
            order = 1
            # an odd dip of a 2x2 block with both sigmas tiny is order >= 2,
            # but odd sign change with even order cannot happen; keep 1 and
            # let the polished paths refine when they run.
        else:
            s_star = _interp_dip(s_grid, sigmas, i)
            order = 2
        out.append((float(s_star), order))
    merged = []
    for s_star, order in sorted(out):
        if merged and s_star - merged[-1][0] < cfg.merge_tol:
            continue
        merged.append((s_star, order))
    return merged


def classify_pair(model, vec, s_star, cfg=None):
    """Stability of a conjugate radius under perturbation of the direction.

    Shoots `cfg.samples` nearby unit vectors, requires each to exhibit a
    conjugate radius of the same multiplicity inside the match window, and
    measures the transversality slope on the central geodesic.  Raises
    InsufficientResolution when the perturbed picture is inconsistent.
    """
    cfg = cfg or ConjugacyConfig()
    base = find_conjugate_pairs(model, vec, s_star + cfg.match_window, cfg)
    central = [r for r in base if abs(r.s_star - s_star) <= cfg.match_window]
    if not central:
        raise NotConjugate(f"no conjugate radius within {cfg.match_window} of {s_star}")
    rec = min(central, key=lambda r: abs(r.s_star - s_star))
    slope = transversality_slope(model, vec, rec.s_star, rec.order, cfg)

    rng = np.random.default_rng(cfg.seed)
    n = model.dim
    g = model.metric(vec.base.chart, vec.base.coords)
    w = vec.comps[None] + cfg.neighborhood_radius * rng.standard_normal((cfg.samples, n))
    w = w / np.sqrt(np.einsum("ij,...i,...j->...", g, w, w))[:, None]

    s_lo = max(rec.s_star - cfg.match_window, cfg.ds_check)
    s_hi = rec.s_star + cfg.match_window
    grid = _schedule(s_hi, cfg.ds_check)
    m = len(grid)
    dets = np.empty((cfg.samples, m))
    sigmas = np.empty((cfg.samples, m))
    state = jacobi_state(
        model, vec.base.chart, np.broadcast_to(vec.base.coords, (cfg.samples, n)), w
    )

    def snap(i, s, st):
        if i == 0:
            dets[:, 0], sigmas[:, 0] = 1.0, 1.0
        else:
            det, sv = _sigma_det(st.extras["D"] / s)
            dets[:, i], sigmas[:, i] = det, sv[:, 0]

    sweep(model, state, grid, cfg.step, on_node=snap, extra_rhs=jacobi_rhs)
    found = []
    for e in range(cfg.samples):
        cands = [
            (s, k) for s, k in _detect_interp(grid, dets[e], sigmas[e], cfg)
            if s_lo <= s <= s_hi and k == rec.order
        ]
        if len(cands) != 1:
            raise InsufficientResolution(
                f"perturbed geodesic shows {len(cands)} pairs of order {rec.order} "
                f"in [{s_lo:.4f}, {s_hi:.4f}]; shrink the neighborhood or refine the grid"
            )
        found.append(cands[0][0])

    found = np.array(found)
    spread = float(np.abs(found - rec.s_star).max())
    stable = bool(abs(slope) > cfg.slope_min)
    return PairClassification(
        s_star=rec.s_star,
        order=rec.order,
        slope=float(slope),
        stable=stable,
        sample_radii=found,
        spread=spread,
    )


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------


def _base_grid(model, counts):
    """Grid of chart-0 base coordinates clear of the chart seams."""
    periods = model.coord_periodic(0)
    axes = []
    for k, cnt in enumerate(counts):
        if np.isfinite(periods[k]):
            axes.append(periods[k] * (np.arange(cnt) + 0.5) / cnt)
        else:
            # polar-type coordinate on (0, pi): stay where chart 0 is safe
            axes.append(np.linspace(0.35, np.pi - 0.35, cnt))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), axes


def _dir_grid(model, coords, n_dir):
    """Unit direction fans at each base point (2d: a circle of angles)."""
    if model.dim != 2:
        raise BadParams("direction scans are implemented for surfaces")
    frame = orthonormal_frame(model, 0, coords)
    ang = 2.0 * np.pi * np.arange(n_dir) / n_dir
    c, s = np.cos(ang), np.sin(ang)
    return np.einsum("bik,dk->bdi", frame, np.stack([c, s], axis=-1))


def conjugate_scan(model, base_counts, n_dir, s_max, cfg=None):
    """Sweep a grid of geodesics and label conjugate pairs into components.

    `base_counts` gives the grid resolution per chart-0 coordinate and
    `n_dir` the number of directions per base point.  Records carry grid
    indices and a component label; radii come from grid interpolation.
    """
    cfg = cfg or ConjugacyConfig()
    base, axes = _base_grid(model, base_counts)
    nb = base.shape[0]
    dirs = _dir_grid(model, base, n_dir)
    flat_x = np.repeat(base, n_dir, axis=0)
    flat_v = dirs.reshape(-1, model.dim)
    ng = flat_x.shape[0]

    s_grid = _schedule(s_max, cfg.ds_check)
    m = len(s_grid)
    dets = np.empty((ng, m))
    sigmas = np.empty((ng, m))
    state = jacobi_state(model, 0, flat_x, flat_v)

    def snap(i, s, st):
        if i == 0:
            dets[:, 0], sigmas[:, 0] = 1.0, 1.0
        else:
            det, sv = _sigma_det(st.extras["D"] / s)
            dets[:, i], sigmas[:, i] = det, sv[:, 0]

    sweep(model, state, s_grid, cfg.step, on_node=snap, extra_rhs=jacobi_rhs)

    records = []
    per_geo = []
    for e in range(ng):
        found = _detect_interp(s_grid, dets[e], sigmas[e], cfg)
        per_geo.append(found)
        bi, di = divmod(e, n_dir)
        for s_star, order in found:
            records.append(
                ConjugateRecord(
                    s_star=s_star,
                    order=order,
                    base_chart=0,
                    base_coords=flat_x[e].copy(),
                    direction=flat_v[e].copy(),
                    base_index=bi,
                    dir_index=di,
                )
            )

    _label_components(model, records, axes, n_dir, cfg)
    n_comp = 1 + max((r.component for r in records), default=-1)
    return ScanResult(
        records=records,
        base_grid=base,
        dir_grid=dirs,
        n_components=n_comp,
        min_sigma=float(sigmas[:, 1:].min()) if m > 1 else float("inf"),
        manifold=model.name,
        params=dict(model.params),
    )


def _label_components(model, records, axes, n_dir, cfg):
    """Union-find over grid-adjacent records with matching order and radius."""
    if not records:
        return
    shape = tuple(len(a) for a in axes) + (n_dir,)
    periods = model.coord_periodic(0)
    wrap_dims = [np.isfinite(periods[k]) for k in range(len(axes))] + [True]

    cell = {}
    for idx, r in enumerate(records):
        key = np.unravel_index(r.base_index, shape[:-1]) + (r.dir_index,)
        cell.setdefault(key, []).append(idx)

    parent = list(range(len(records)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    # records in the same cell chain by radius, adjacent cells glue when a
    # record of the same order sits within the radius window
    for key, idxs in cell.items():
        for d in range(len(shape)):
            for step in (-1, 1):
                nb = list(key)
                nb[d] += step
                if wrap_dims[d]:
                    nb[d] %= shape[d]
                elif not (0 <= nb[d] < shape[d]):
                    continue
                other = cell.get(tuple(nb))
                if not other:
                    continue
                for i in idxs:
                    for j in other:
                        ri, rj = records[i], records[j]
                        if ri.order == rj.order and abs(ri.s_star - rj.s_star) < cfg.s_adjacent:
                            union(i, j)

    label = -1
    seen = {}
    for i in range(len(records)):
        r = find(i)
        if r not in seen:
            label += 1
            seen[r] = label
    for i, rec in enumerate(records):
        rec.component = seen[find(i)]


# ---------------------------------------------------------------------------
# atlas files
# ---------------------------------------------------------------------------


def atlas_to_csv(path, scan, run_id=""):
    """Write scan records as CSV, 17 significant digits per float.

    Columns: chart and base coordinates, direction components, conjugate
    radius, order, regular flag (empty until classify_pair has run),
    transversality slope (nan until computed), component id, and the
    scan grid indices.  The leading metadata row ties the file to a run
    manifest when the batch driver passes a run id.
    """
    n = scan.base_grid.shape[-1]
    head = (
        ["chart_id"]
        + [f"x{i}" for i in range(n)]
        + [f"v{i}" for i in range(n)]
        + ["s_star", "order", "regular", "transversality", "component_id",
           "base_index", "dir_index"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", run_id, "manifold", scan.manifold,
                    "params", repr(scan.params)])
        w.writerow(head)
        for r in scan.records:
            reg = "" if r.stable is None else str(int(r.stable))
            slo = "nan" if r.slope is None else f"{r.slope:.17g}"
            w.writerow(
                [r.base_chart]
                + [f"{c:.17g}" for c in r.base_coords]
                + [f"{c:.17g}" for c in r.direction]
                + [f"{r.s_star:.17g}", r.order, reg, slo,
                   r.component, r.base_index, r.dir_index]
            )


def atlas_from_csv(path):
    """Read records written by atlas_to_csv."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = rows[0]
    head = rows[1]
    n = sum(1 for h in head if h.startswith("x"))
    records = []
    for row in rows[2:]:
        slope = float(row[2 * n + 4])
        records.append(
            ConjugateRecord(
                base_chart=int(row[0]),
                base_coords=np.array([float(x) for x in row[1 : 1 + n]]),
                direction=np.array([float(x) for x in row[1 + n : 1 + 2 * n]]),
                s_star=float(row[1 + 2 * n]),
                order=int(row[2 + 2 * n]),
                stable=None if row[3 + 2 * n] == "" else bool(int(row[3 + 2 * n])),
                slope=None if math.isnan(slope) else slope,
                component=int(row[5 + 2 * n]),
                base_index=int(row[6 + 2 * n]),
                dir_index=int(row[7 + 2 * n]),
            )
        )
    return records, {"run_id": meta[1], "manifold": meta[3], "params": meta[5]}
