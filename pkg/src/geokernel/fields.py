"""Smooth scalar fields used to probe the nonlocal operators.

A field is a plain evaluator plus the two bounds the error estimates
need: a sup bound and a Hessian bound (comparison-type, any uniform bound
on the operator norm of the covariant Hessian will do; they feed bias and
tail estimates, so generous values only make the reported bounds looser,
never wrong).

Most fields are defined through the ambient embedding, which makes them
well-defined functions of the point no matter which chart the flow
integrator happens to report.  The flat-torus modes use chart coordinates
directly; that chart is global, so there is no seam to worry about.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import eval_legendre, sph_harm_y

from .errors import BadParams

__all__ = [
    "TestField",
    "eval_field",
    "constant_field",
    "torus_mode",
    "zonal_harmonic",
    "sphere_harmonic",
    "ambient_bump",
    "random_wave",
]


@dataclass(frozen=True)
class TestField:
    """A scalar field with the bounds used by error estimates."""

    name: str
    evaluator: Callable      # (model, chart, coords (..., n)) -> (...)
    sup_bound: float
    hess_bound: float
    freq_index: float = 0.0  # frequency label for spectral fits

    def __call__(self, model, chart, coords):
        return self.evaluator(model, chart, coords)


def eval_field(field, model, charts, coords):
    """Evaluate a field on per-element chart data (charts (...,), coords (..., n))."""
    charts = np.asarray(charts)
    out = np.empty(charts.shape)
    for c in np.unique(charts):
        idx = charts == c
        out[idx] = field(model, int(c), coords[idx])
    return out


def constant_field(value=1.0):
    def ev(model, chart, coords):
        coords = np.asarray(coords, dtype=float)
        return np.full(coords.shape[:-1], float(value))

    return TestField(f"const[{value:g}]", ev, abs(float(value)), 0.0, 0.0)


def torus_mode(k, lengths, kind="cos"):
    """Fourier mode cos/sin(kappa . x) on a flat torus, kappa_i = 2 pi k_i / L_i."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
    kappa = 2.0 * np.pi * k / lengths
    fn = np.cos if kind == "cos" else np.sin
    if kind not in ("cos", "sin"):
        raise BadParams(f"kind must be cos or sin, got {kind!r}")

    def ev(model, chart, coords):
        return fn(np.asarray(coords, dtype=float) @ kappa)

    freq = float(np.linalg.norm(kappa))
    return TestField(f"{kind}[k={list(map(float, k))}]", ev, 1.0, freq**2, freq)


def zonal_harmonic(l, axis, radius=1.0):
    """Legendre mode P_l(cos(distance to axis)) on a round sphere."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    l = int(l)

    def ev(model, chart, coords):
        p = model.embed(chart, np.asarray(coords, dtype=float)) / radius
        return eval_legendre(l, np.clip(p @ axis, -1.0, 1.0))

    # |Hess P_l(cos d)| = O(l^2) with unit prefactor on the unit sphere
    return TestField(f"zonal[l={l}]", ev, 1.0, l * (l + 1) / radius**2, float(l))


def sphere_harmonic(l, m, radius=1.0):
    """Real spherical harmonic on the round 2-sphere (ambient-defined)."""
    l, m = int(l), int(m)
    if abs(m) > l:
        raise BadParams(f"need |m| <= l, got l={l}, m={m}")

    def ev(model, chart, coords):
        p = model.embed(chart, np.asarray(coords, dtype=float)) / radius
        theta = np.arccos(np.clip(p[..., 2], -1.0, 1.0))
        phi = np.arctan2(p[..., 1], p[..., 0])
        y = sph_harm_y(l, abs(m), theta, phi)
        if m > 0:
            return np.sqrt(2.0) * (-1.0) ** m * y.real
        if m < 0:
            return np.sqrt(2.0) * (-1.0) ** m * y.imag
        return y.real

    sup = 1.0  # |Y_lm| <= sqrt((2l+1)/(4 pi)) < 1 for the l used here
    return TestField(f"Y[{l},{m}]", ev, sup, l * (l + 1) / radius**2, float(l))


def ambient_bump(center, width):
    """Gaussian of the ambient chordal distance to a fixed point.

    Restricted to the manifold it is smooth with a strict maximum exactly
    where the manifold touches `center` (put the center on the manifold).
    """
    center = np.asarray(center, dtype=float)
    width = float(width)
    if width <= 0:
        raise BadParams("width must be positive")

    def ev(model, chart, coords):
        p = model.embed(chart, np.asarray(coords, dtype=float))
        d2 = np.sum((p - center) ** 2, axis=-1)
        return np.exp(-d2 / width**2)

    # crude but safe: |Hess exp(-d^2/w^2)| <= (2/w^2)(1 + 2 d^2/w^2) e^{-d^2/w^2}
    # and d^2/w^2 e^{-d^2/w^2} <= 1/e; double for embedding curvature effects
    hess = (2.0 / width**2) * (1.0 + 4.0 / np.e) * 2.0
    return TestField(f"bump[w={width:g}]", ev, 1.0, hess, 0.0)


def random_wave(seed, ambient_dim, n_terms=4, max_wavenumber=2.0, scale=1.0):
    """Random superposition of ambient plane waves, restricted to the manifold."""
    rng = np.random.default_rng(seed)
    amps = scale * rng.uniform(0.3, 1.0, n_terms) * rng.choice([-1.0, 1.0], n_terms)
    waves = rng.uniform(-max_wavenumber, max_wavenumber, (n_terms, ambient_dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, n_terms)

    def ev(model, chart, coords):
        p = model.embed(chart, np.asarray(coords, dtype=float))
        return np.einsum("t,...t->...", amps, np.cos(p @ waves.T + phases))

    sup = float(np.sum(np.abs(amps)))
    # second ambient derivatives bounded by sum |amp| |wave|^2; the pullback
    # to the manifold also feels the embedding hessian, bounded by |grad| here
    wn = np.linalg.norm(waves, axis=1)
    hess = float(np.sum(np.abs(amps) * (wn**2 + wn)))
    return TestField(f"wave[seed={seed}]", ev, sup, hess, 0.0)
