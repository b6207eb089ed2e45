"""Scalar fields on radial grids, weighted decay norms, cutoffs, mollifier.

The weighted norm follows the usual AF convention: for weight exponent rho,
integrability order p and derivative count k,

    ||f|| = sum_{j<=k} || w^(-rho - 3/p + j) D^j f ||_Lp,   w = (1 + r^2)^(1/2),

with the L^p taken over the exterior domain with the flat volume element
4 pi r^2 dr.  On compactified grids the quadrature runs over the finite
nodes and the remaining tail is modeled by a power law fitted to the
outermost decade of the integrand; a fitted integrand exponent at or above
-1 (within a small margin) is reported as divergence together with the
exponent, rather than as an infinite value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import (  # noqa: F401  (re-exported: grids are part of this module's surface)
    MIN_NODES,
    SPACING_R,
    SPACING_S,
    RadialGrid,
    d1_index,
    d2_index,
    make_radial_grid,
    s_nodes,
)

# fitted r-integrand exponents above this are treated as non-integrable;
# -1 is the exact log-divergence boundary, 0.05 is the safety margin
_DIVERGENCE_EXPONENT = -1.0 - 0.05
_TAIL_FIT_MIN_POINTS = 3


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a radial scalar together with a decay-class tag."""

    grid: RadialGrid
    values: np.ndarray
    decay_order: float = -1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_nodes,):
            raise ValueError(f"values shape {v.shape} != ({self.grid.n_nodes},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite (store limits at infinity)")
        if not (-3.0 < self.decay_order < 1.0):
            raise ValueError(f"decay_order must lie in (-3, 1), got {self.decay_order}")


@dataclass(frozen=True)
class WeightedNormSpec:
    """Parameters (k, p, rho) of the weighted Sobolev norm."""

    k: int = 2
    p: float = 2.0
    rho: float = -0.5

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not self.p > 1.0:
            raise ValueError("p must exceed 1")

    def validate_for_membership(self) -> None:
        # continuity of the represented metrics needs k - 3/p > 0
        if self.k < 2:
            raise ValueError("membership checks need k >= 2")
        if not self.p > 3.0 / self.k:
            raise ValueError("membership checks need p > 3/k")
        if not (-1.0 < self.rho < 0.0):
            raise ValueError("membership checks need rho in (-1, 0)")


@dataclass(frozen=True)
class WeightedNormResult:
    """Value of a weighted norm, or a divergence report with tail exponents."""

    value: float
    divergent: bool
    tail_exponents: tuple = dc_field(default=())

    def __float__(self) -> float:
        if self.divergent:
            raise ValueError(
                f"norm diverges (fitted tail exponents {self.tail_exponents})"
            )
        return self.value


def _derivative_magnitudes(f: ScalarField, j: int) -> np.ndarray:
    """|d^j f / dr^j| at the nodes; the j = 2 entry is the radial Hessian
    Frobenius magnitude sqrt(f_rr^2 + 2 (f_r / r)^2)."""
    g = f.grid
    v = f.values
    if j == 0:
        return np.abs(v)
    if g.spacing == SPACING_R:
        fr = d1_index(v, g.step)
        if j == 1:
            return np.abs(fr)
        frr = d2_index(v, g.step)
        return np.sqrt(frr**2 + 2.0 * (fr / g.r) ** 2)
    s = g.s
    di = d1_index(v, g.step)
    fr = s**2 * di
    if j == 1:
        return np.abs(fr)
    frr = s**4 * d2_index(v, g.step) - 2.0 * s**3 * di
    f_r_over_r = s * fr
    return np.sqrt(frr**2 + 2.0 * f_r_over_r**2)


def _tail_exponent(r: np.ndarray, integrand: np.ndarray) -> float:
    """Least-squares slope of log integrand vs log r over the outer nodes."""
    pos = integrand > 0.0
    if np.count_nonzero(pos) < _TAIL_FIT_MIN_POINTS:
        return -np.inf  # effectively compactly supported
    lr = np.log(r[pos])
    li = np.log(integrand[pos])
    slope = np.polyfit(lr, li, 1)[0]
    return float(slope)


def weighted_norm(f: ScalarField, spec: WeightedNormSpec) -> WeightedNormResult:
    """Weighted Sobolev norm of a radial field.

    Rejects k beyond the second-order stencils.  On grids that reach
    infinity the tail contribution beyond the last finite node comes from
    the fitted power law; divergence is decided from that fit.
    """
    if spec.k > 2:
        raise ValueError("k > 2 exceeds the available stencil order")
    g = f.grid
    finite = np.isfinite(g.r)
    r_f = g.r[finite]
    compactified = g.is_compactified

    total = 0.0
    exponents = []
    divergent = False
    for j in range(spec.k + 1):
        a = -spec.rho - 3.0 / spec.p + j
        mag = _derivative_magnitudes(f, j)[finite]
        integrand = 4.0 * math.pi * (1.0 + r_f**2) ** (a * spec.p / 2.0) * mag**spec.p * r_f**2
        if g.spacing == SPACING_R:
            term = float(np.trapezoid(integrand, x=r_f))
            exponents.append(None)
        else:
            s_f = g.s[finite]
            # dr = -ds/s^2; |trapezoid| over descending s
            term = float(abs(np.trapezoid(integrand / s_f**2, x=s_f)))
            if compactified:
                n_fit = max(_TAIL_FIT_MIN_POINTS + 1, len(r_f) // 4)
                e = _tail_exponent(r_f[-n_fit:], integrand[-n_fit:])
                exponents.append(e)
                if e >= _DIVERGENCE_EXPONENT:
                    divergent = True
                    continue
                if np.isfinite(e) and integrand[-1] > 0.0:
                    term += integrand[-1] * r_f[-1] / (-e - 1.0)
            else:
                exponents.append(None)
        total += term ** (1.0 / spec.p)

    if divergent:
        return WeightedNormResult(value=math.nan, divergent=True,
                                  tail_exponents=tuple(exponents))
    return WeightedNormResult(value=total, divergent=False,
                              tail_exponents=tuple(exponents))


def flat_laplacian(f: ScalarField) -> ScalarField:
    """Flat radial Laplacian f'' + 2 f'/r as a field on the same grid.

    Exact (to rounding) on fields linear in s = 1/r and on r^2; order 2
    otherwise, one-sided at both ends.
    """
    return ScalarField(f.grid, f.grid.laplacian_flat(f.values), decay_order=f.decay_order)


# -- cutoff and smoothing ----------------------------------------------------


def _bump(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0.0
    with np.errstate(over="ignore"):
        out[pos] = np.exp(-1.0 / x[pos])
    return out


def smoothstep_smooth(x) -> np.ndarray:
    """C-infinity monotone step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    b = _bump(np.clip(x, 0.0, 1.0))
    c = _bump(1.0 - np.clip(x, 0.0, 1.0))
    out = np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, b / (b + c)))
    return out


def smoothstep_cubic(x) -> np.ndarray:
    """C^1 monotone step x^2 (3 - 2x) with exact plateaus."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0, 0.0, np.where(x >= 1.0, 1.0, xc * xc * (3.0 - 2.0 * xc)))


def cutoff_eta(t, R: float):
    """Cutoff equal to 1.0 exactly for t <= R and 0.0 exactly for t >= 2R.

    Smooth and monotone in between (exponential-bump smoothstep).  Accepts
    scalars or arrays; inf is mapped to the outer plateau.
    """
    if not R > 0.0:
        raise ValueError("R must be positive")
    t_arr = np.asarray(t, dtype=float)
    x = t_arr / R - 1.0  # transition for x in (0, 1)
    out = 1.0 - smoothstep_smooth(x)
    out = np.where(t_arr <= R, 1.0, np.where(t_arr >= 2.0 * R, 0.0, out))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


_MOLLIFY_MAX_PASSES = 1024


def mollify(f: ScalarField, scale: float) -> ScalarField:
    """Binomial smoothing with effective width ``scale`` in the chart coordinate.

    Endpoint values are never touched.  Constants are preserved bitwise
    (the [1/4, 1/2, 1/4] taps are exact dyadics), the operation is linear
    and positivity preserving, and scale below half a grid step is the
    identity.
    """
    if scale < 0.0:
        raise ValueError("scale must be nonnegative")
    g = f.grid
    chart_len = g.step * (g.n_nodes - 1)
    if scale >= chart_len:
        raise ValueError(f"scale {scale} exceeds the chart length {chart_len}")
    n_pass = int(math.ceil(2.0 * (scale / g.step) ** 2))
    if n_pass > _MOLLIFY_MAX_PASSES:
        raise ValueError(
            f"scale {scale} needs {n_pass} smoothing passes; "
            f"limit is {_MOLLIFY_MAX_PASSES} (refine the grid or shrink scale)"
        )
    v = f.values.copy()
    for _ in range(n_pass):
        v[1:-1] = 0.25 * v[:-2] + 0.5 * v[1:-1] + 0.25 * v[2:]
    return ScalarField(g, v, decay_order=f.decay_order)


def mollify_window(values: np.ndarray, grid: RadialGrid, scale: float,
                   window: np.ndarray) -> np.ndarray:
    """Smoothed values inside ``window`` (boolean mask); bitwise passthrough outside."""
    sm = mollify(ScalarField(grid, values), scale).values
    return np.where(window, sm, values)
