"""The canonical symplectic structure carried by the geodesic flow.

On TM we use the pullback of the Liouville form under the metric: with
theta = g_ij v^i dx^j, the symplectic form is

    omega = d theta
          = v^i (d_k g_ij) dx^k ^ dx^j  +  g_ij dv^i ^ dx^j,

evaluated here directly in natural chart components (x, v, dx, dv).  With
this orientation a vertical perturbation paired against its horizontal
partner gives + g_11 on the flat torus.

The differential of the geodesic flow is computed variationally: a
tangent vector (dx, dv) of TM seeds a Jacobi field J(0) = dx,
(covariant) J'(0) = dv + Gamma[dx, v], which is pushed along the geodesic
in a full parallel frame (velocity leg included, so the tangential
component just drifts linearly).  No separate integrator is needed beyond
the one that moves the frame itself.

Conjugate radii give rise to covector pairs: a kernel direction a of the
normal block D(s*) determines eta = (E(0)_perp a)^flat at the foot and
eta_tilde = (E(s*)_perp D'(s*) a)^flat at the tip.  The defining exchange
identity  eta(d pi W) = eta_tilde(d pi dPhi W)  for every W tangent to the
unit bundle, together with eta(v) = eta_tilde(v_tip) = 0, is checked by
verify_geometric_lemma over an explicit basis.  (The pair is stored in
the untwisted orientation; flip the sign of eta_tilde for the convention
that makes the exchange antisymmetric.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadParams, DegenerateKernel
from .flow import make_state, sweep
from .manifolds import CovectorVec, TangentVec, make_point, orthonormal_frame

__all__ = [
    "TangentOfTM",
    "CovectorPair",
    "omega_g_eval",
    "variational_rhs",
    "flow_differential",
    "flow_symplectic_residual",
    "canonical_pair",
    "verify_geometric_lemma",
    "LemmaReport",
]


@dataclass(frozen=True)
class TangentOfTM:
    """A tangent vector of TM at (chart, x, v), natural components (dx, dv)."""

    chart: int
    x: np.ndarray
    v: np.ndarray
    dx: np.ndarray
    dv: np.ndarray


@dataclass
class CovectorPair:
    """A conjugate covector pair (eta at the foot, eta_tilde at the tip)."""

    eta: CovectorVec
    eta_tilde: CovectorVec
    s_star: float
    order: int
    kernel_column: np.ndarray
    velocity_foot: np.ndarray
    velocity_tip: np.ndarray
    sign_convention: str = "untwisted"


@dataclass
class LemmaReport:
    exchange_residual: float     # max |eta(dpi W) - eta_tilde(dpi dPhi W)|
    foot_annihilation: float     # |eta(v)|
    tip_annihilation: float      # |eta_tilde(v_tip)|
    scale: float                 # max of the two covector norms
    passed: bool


def omega_g_eval(model, chart, x, v, xi, upsilon):
    """The symplectic pairing of two TM tangents at the state (x, v).

    `xi` and `upsilon` are pairs (dx, dv) of chart components; all inputs
    broadcast.  Returns omega(xi, upsilon) with the orientation fixed in
    the module docstring.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    xdx, xdv = (np.asarray(a, dtype=float) for a in xi)
    ydx, ydv = (np.asarray(a, dtype=float) for a in upsilon)
    g = model.metric(chart, x)
    dg = model.metric_deriv(chart, x)      # dg[k, i, j] = d_k g_ij
    coef = np.einsum("...i,...kij->...kj", v, dg)
    term1 = np.einsum("...kj,...k,...j->...", coef, xdx, ydx)
    term1 -= np.einsum("...kj,...k,...j->...", coef, ydx, xdx)
    term2 = np.einsum("...ij,...i,...j->...", g, xdv, ydx)
    term2 -= np.einsum("...ij,...i,...j->...", g, ydv, xdx)
    return term1 + term2


def variational_rhs(model, chart, x, v, extras, gamma):
    """Frame transport plus J'' = -K J for full-frame Jacobi components."""
    e_full = extras["frame"]
    de = -np.einsum("...kij,...i,...jc->...kc", gamma, v, e_full)
    w = np.moveaxis(e_full, -1, -2)
    act = model.curvature_action(chart, x[..., None, :], v[..., None, :], w)
    g = model.metric(chart, x)
    kmat = np.einsum("...ij,...ai,...jb->...ab", g, act, e_full)
    return {
        "frame": de,
        "J": extras["Jp"],
        "Jp": -np.einsum("...ab,...bk->...ak", kmat, extras["J"]),
    }


def _to_frame_components(model, chart, x, v, dxs, dvs):
    """Covariant data of TM tangents in the parallel frame at the foot."""
    g = model.metric(chart, x)
    gamma = model.christoffel(chart, x)
    frame = orthonormal_frame(model, chart, np.atleast_2d(x), v=np.atleast_2d(v))[0]
    dv_cov = dvs + np.einsum("kij,...i,j->...k", gamma, dxs, v)
    j = np.einsum("ik,ij,...j->...k", frame, g, dxs)
    jp = np.einsum("ik,ij,...j->...k", frame, g, dv_cov)
    return frame, j, jp


def _from_frame_components(model, chart, x, v, frame, j, jp):
    g = model.metric(chart, x)
    gamma = model.christoffel(chart, x)
    dx = np.einsum("ik,...k->...i", frame, j)
    dv_cov = np.einsum("ik,...k->...i", frame, jp)
    dv = dv_cov - np.einsum("kij,...i,j->...k", gamma, dx, v)
    return dx, dv


def flow_differential(model, vec, tangents, s, step=2.0e-3):
    """Push TM tangents along the geodesic flow for time s.

    `tangents` is a list of (dx, dv) pairs at vec; returns the propagated
    pairs at the endpoint state, plus the endpoint (chart, x, v).
    """
    chart, x, v = vec.base.chart, vec.base.coords, vec.comps
    dxs = np.stack([np.asarray(t[0], dtype=float) for t in tangents])
    dvs = np.stack([np.asarray(t[1], dtype=float) for t in tangents])
    frame, j, jp = _to_frame_components(model, chart, x, v, dxs, dvs)
    extras = {
        "frame": ("vectors", frame[None]),
        "J": ("none", j.T[None]),
        "Jp": ("none", jp.T[None]),
    }
    state = make_state(model, [chart], x[None], v[None], extras)
    sweep(model, state, [s], step, extra_rhs=variational_rhs)
    c1 = int(state.chart[0])
    x1, v1 = state.x[0], state.v[0]
    dx1, dv1 = _from_frame_components(
        model, c1, x1, v1, state.extras["frame"][0],
        state.extras["J"][0].T, state.extras["Jp"][0].T,
    )
    return [(dx1[k], dv1[k]) for k in range(len(tangents))], (c1, x1, v1)


def flow_symplectic_residual(model, vec, s, n_checks=20, seed=0, step=2.0e-3):
    """Relative drift of omega under the flow on random tangent pairs.

    Draws n_checks pairs (X, Y) of TM tangents at vec with normal
    components, flows them for time s, and returns
    |omega(dPhi X, dPhi Y) - omega(X, Y)| / (|X| |Y|) per pair, with the
    norms taken in the Sasaki fashion at the foot.
    """
    rng = np.random.default_rng(seed)
    n = model.dim
    chart, x, v = vec.base.chart, vec.base.coords, vec.comps
    raw = rng.standard_normal((2 * n_checks, 2, n))
    tangents = [(raw[k, 0], raw[k, 1]) for k in range(2 * n_checks)]
    pushed, (c1, x1, v1) = flow_differential(model, vec, tangents, s, step=step)

    g = model.metric(chart, x)
    gamma = model.christoffel(chart, x)
    norms = np.empty(2 * n_checks)
    for k, (dx, dv) in enumerate(tangents):
        dv_cov = dv + np.einsum("kij,i,j->k", gamma, dx, v)
        norms[k] = math.sqrt(dx @ g @ dx + dv_cov @ g @ dv_cov)

    out = np.empty(n_checks)
    for k in range(n_checks):
        xi, yps = tangents[2 * k], tangents[2 * k + 1]
        before = omega_g_eval(model, chart, x, v, xi, yps)
        after = omega_g_eval(model, c1, x1, v1, pushed[2 * k], pushed[2 * k + 1])
        out[k] = abs(after - before) / (norms[2 * k] * norms[2 * k + 1])
    return out


# ---------------------------------------------------------------------------
# canonical covector pairs at conjugate radii
# ---------------------------------------------------------------------------


def canonical_pair(model, record, column=0):
    """Covector pair attached to one kernel direction of a conjugate record.

    The record must come from the polished detector (it needs the frame,
    D' and the kernel at the tip).  `column` selects the kernel direction
    when the multiplicity exceeds one.
    """
    if record.kernel is None or record.frame is None or record.dpmat is None:
        raise DegenerateKernel("record carries no polished kernel data")
    if not 0 <= column < record.kernel.shape[1]:
        raise BadParams(f"kernel has {record.kernel.shape[1]} columns, asked for {column}")
    a = record.kernel[:, column]
    nrm = np.linalg.norm(a)
    if nrm < 1e-12:
        raise DegenerateKernel("kernel direction is numerically zero")
    a = a / nrm

    foot = make_point(model, record.base_chart, record.base_coords)
    frame0 = orthonormal_frame(
        model, record.base_chart, record.base_coords[None], v=record.direction[None]
    )[0]
    w_foot = frame0[:, 1:] @ a
    g_foot = model.metric(record.base_chart, record.base_coords)
    eta = CovectorVec(foot, g_foot @ w_foot)

    tip = make_point(model, record.chart, record.coords)
    w_tip = record.frame[:, 1:] @ (record.dpmat @ a)
    g_tip = model.metric(record.chart, record.coords)
    eta_tilde = CovectorVec(tip, g_tip @ w_tip)

    return CovectorPair(
        eta=eta,
        eta_tilde=eta_tilde,
        s_star=record.s_star,
        order=record.order,
        kernel_column=a,
        velocity_foot=record.direction.copy(),
        velocity_tip=record.velocity.copy(),
    )


def verify_geometric_lemma(model, pair, tol_factor=1.0e-6, step=2.0e-3):
    """Check the exchange identity of a covector pair over a full basis.

    Tangents to the unit bundle at the foot: n horizontal directions and
    n-1 vertical directions orthogonal to the velocity.  Each is flowed to
    the tip; the exchange residual compares eta against the pullback of
    eta_tilde through the footpoint projection.
    """
    n = model.dim
    foot = pair.eta.base
    chart, x = foot.chart, foot.coords
    v = pair.velocity_foot
    frame = orthonormal_frame(model, chart, x[None], v=v[None])[0]
    gamma = model.christoffel(chart, x)

    tangents = []
    for i in range(n):
        dx = frame[:, i]
        dv = -np.einsum("kij,i,j->k", gamma, dx, v)   # covariantly constant lift
        tangents.append((dx, dv))
    for a in range(1, n):
        tangents.append((np.zeros(n), frame[:, a]))

    pushed, _tip_state = flow_differential(
        model, TangentVec(foot, v), tangents, pair.s_star, step=step
    )

    res = 0.0
    for k in range(len(tangents)):
        lhs = float(pair.eta.comps @ tangents[k][0])
        rhs = float(pair.eta_tilde.comps @ pushed[k][0])
        res = max(res, abs(lhs - rhs))

    g_foot = model.metric(chart, x)
    g_tip = model.metric(pair.eta_tilde.base.chart, pair.eta_tilde.base.coords)
    n_eta = math.sqrt(pair.eta.comps @ np.linalg.solve(g_foot, pair.eta.comps))
    n_tilde = math.sqrt(pair.eta_tilde.comps @ np.linalg.solve(g_tip, pair.eta_tilde.comps))
    scale = max(n_eta, n_tilde)

    r2 = abs(float(pair.eta.comps @ v))
    r3 = abs(float(pair.eta_tilde.comps @ pair.velocity_tip))
    passed = bool(res < tol_factor * scale and r2 < tol_factor * scale and r3 < tol_factor * scale)
    return LemmaReport(res, r2, r3, scale, passed)
