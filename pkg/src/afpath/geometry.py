"""Conformally flat radial metrics on two charts and their invariants.

A metric is stored as a conformal factor w > 0 against the flat chart
metric: g = w^4 delta.  Two charts are used:

* ``exterior``: {r >= 1} with inner boundary sphere r = 1; asymptotically
  flat when w -> 1.
* ``ball``: the closed unit ball {rho <= 1}, boundary sphere rho = 1,
  distinguished interior point at rho = 0.  The node layout is the same
  RadialGrid with rho = s, so exterior-side code carries over.

Boundary mean curvature is reported for the unit normal pointing toward
infinity by default (exterior chart: +d/dr; ball chart: toward the center
point, -d/drho).  With that convention the flat exterior has H = +2 and
both the Schwarzschild boundary and the equator of the round hemisphere
have H = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import ScalarField, WeightedNormSpec, weighted_norm
from .grid import SPACING_S, RadialGrid, d1_index, d2_index, make_radial_grid

CHART_EXTERIOR = "exterior"
CHART_BALL = "ball"
_CHARTS = (CHART_EXTERIOR, CHART_BALL)

TOWARD_INFINITY = "toward-infinity"
TOWARD_ORIGIN = "toward-origin"
_ORIENTATIONS = (TOWARD_INFINITY, TOWARD_ORIGIN)

# |e1 - e2| <= REL * (|m| + 1) between successive Richardson increments
_MASS_CONVERGENCE_REL = 0.05


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """Radial conformal factor against the flat chart metric."""

    grid: RadialGrid
    factor: np.ndarray
    chart: str = CHART_EXTERIOR
    label: str = "euclidean-exterior"

    def __post_init__(self):
        w = np.asarray(self.factor, dtype=float)
        object.__setattr__(self, "factor", w)
        if self.chart not in _CHARTS:
            raise ValueError(f"chart must be one of {_CHARTS}, got {self.chart!r}")
        if w.shape != (self.grid.n_nodes,):
            raise ValueError(f"factor shape {w.shape} != ({self.grid.n_nodes},)")
        if not np.all(np.isfinite(w)):
            raise ValueError("conformal factor must be finite at every node")
        if not np.all(w > 0.0):
            raise ValueError("conformal factor must be positive")
        if self.chart == CHART_BALL and not self.grid.is_compactified:
            raise ValueError("ball chart requires a uniform-in-s grid reaching s = 0")
        self.factor.setflags(write=False)

    @property
    def deviation(self) -> ScalarField:
        """factor - 1 as a decaying field (exterior chart)."""
        if self.chart != CHART_EXTERIOR:
            raise ValueError("deviation is defined on the exterior chart")
        return ScalarField(self.grid, self.factor - 1.0, decay_order=-1.0)

    def with_factor(self, factor: np.ndarray, label: str | None = None) -> "ConformalMetric":
        return replace(self, factor=factor, label=self.label if label is None else label)


def euclidean_metric(grid: RadialGrid) -> ConformalMetric:
    return ConformalMetric(grid, np.ones(grid.n_nodes), label="euclidean-exterior")


def schwarzschild_metric(grid: RadialGrid, mass: float = 2.0) -> ConformalMetric:
    """Spatial Schwarzschild slice of ADM mass ``mass``: w = 1 + mass/(2r)."""
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    w = 1.0 + 0.5 * mass * grid.s
    return ConformalMetric(grid, w, label=f"schwarzschild-mass:{mass:g}")


def round_chart(n_nodes: int) -> ConformalMetric:
    """Round hemisphere on the ball chart: W = (2 / (1 + rho^2))^(1/2).

    Scalar curvature 6, totally geodesic boundary (H = 0).
    """
    grid = make_radial_grid(np.inf, n_nodes)
    rho = grid.s
    w = np.sqrt(2.0 / (1.0 + rho**2))
    return ConformalMetric(grid, w, chart=CHART_BALL, label="round-hemisphere")


# -- chart Laplacians ---------------------------------------------------------


def _laplacian_ball(grid: RadialGrid, values: np.ndarray) -> np.ndarray:
    """Flat radial Laplacian u'' + 2 u'/rho on the ball chart (rho = s).

    The center node uses the regular-limit form 3 u''(0).
    """
    v = np.asarray(values, dtype=float)
    rho = grid.s
    d2 = d2_index(v, grid.step)
    u_rho = -d1_index(v, grid.step)  # rho decreases with node index
    out = np.empty_like(v)
    interior = rho > 0.0
    out[interior] = d2[interior] + 2.0 * u_rho[interior] / rho[interior]
    out[~interior] = 3.0 * d2[~interior]
    return out


def chart_laplacian(metric_or_grid, values: np.ndarray, chart: str | None = None) -> np.ndarray:
    """Flat Laplacian of nodal values in the chart the metric lives on."""
    if isinstance(metric_or_grid, ConformalMetric):
        grid = metric_or_grid.grid
        chart = metric_or_grid.chart
    else:
        grid = metric_or_grid
        chart = chart or CHART_EXTERIOR
    if chart == CHART_BALL:
        return _laplacian_ball(grid, values)
    return grid.laplacian_flat(values)


def scalar_curvature(metric: ConformalMetric) -> ScalarField:
    """R(g) = -8 w^-5 (flat Laplacian of w) for g = w^4 delta."""
    lap = chart_laplacian(metric, metric.factor)
    r_curv = -8.0 * metric.factor ** (-5.0) * lap
    return ScalarField(metric.grid, r_curv, decay_order=-1.0 + 1e-12)


def boundary_robin_flat(grid: RadialGrid, values: np.ndarray,
                        chart: str = CHART_EXTERIOR) -> float:
    """Flat conformal boundary operator t' + t/2 at node 0, one-sided.

    The derivative is radial in the chart coordinate: d/dr on the exterior
    chart, d/drho on the ball chart (node index runs against rho there).
    """
    t0 = float(np.asarray(values, dtype=float)[0])
    d = grid.boundary_deriv_r(values)
    if chart == CHART_BALL:
        d = -d
    return d + 0.5 * t0


def mean_curvature(metric: ConformalMetric, orientation: str = TOWARD_INFINITY) -> float:
    """Boundary mean curvature of g = w^4 delta at node 0.

    Exterior chart: H = +4 w^-3 (dw/dr + w/2) for the toward-infinity
    normal (+d/dr), so the flat exterior reports +2.  Ball chart: the
    toward-infinity normal points at the center (-d/drho), giving
    H = -4 W^-3 (dW/drho + W/2); the round hemisphere equator and the
    compactified Schwarzschild boundary both report 0.
    """
    if orientation not in _ORIENTATIONS:
        raise ValueError(f"orientation must be one of {_ORIENTATIONS}")
    b = boundary_robin_flat(metric.grid, metric.factor, metric.chart)
    w0 = float(metric.factor[0])
    h = 4.0 * b / w0**3
    if metric.chart == CHART_BALL:
        h = -h
    if orientation == TOWARD_ORIGIN:
        h = -h
    return float(h)


def conformal_transform(metric: ConformalMetric, u, label: str | None = None) -> ConformalMetric:
    """Metric u^4 g, i.e. factor w -> u w (factors compose multiplicatively)."""
    u_arr = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0):
        raise ValueError("conformal transforms need a positive factor")
    new_label = label if label is not None else metric.label + "*conformal"
    return metric.with_factor(metric.factor * u_arr, label=new_label)


# -- asymptotics --------------------------------------------------------------


@dataclass(frozen=True)
class AdmMassResult:
    """Richardson-extrapolated mass with a crude convergence verdict."""

    mass: float
    converged: bool
    estimates: tuple

    def __float__(self) -> float:
        return self.mass


def adm_mass(metric: ConformalMetric) -> AdmMassResult:
    """ADM mass read off the conformal factor tail w = 1 + m/(2r) + o(1/r).

    Uses the three outermost finite nodes: raw estimates m(s) = 2 (w - 1)/s
    plus one Richardson step assuming an O(s) error.  ``converged`` is a
    heuristic comparing successive increments; slowly decaying deviations
    (for example r^(-1/2) tails) trip it.
    """
    if metric.chart != CHART_EXTERIOR:
        raise ValueError("ADM mass is defined on the exterior chart")
    finite = np.isfinite(metric.grid.r)
    s = metric.grid.s[finite]
    w = metric.factor[finite]
    if len(s) < 3:
        raise ValueError("need at least 3 finite nodes")
    # outermost first
    s3, s2, s1 = s[-3], s[-2], s[-1]
    m3, m2, m1 = (2.0 * (w[-3] - 1.0) / s3,
                  2.0 * (w[-2] - 1.0) / s2,
                  2.0 * (w[-1] - 1.0) / s1)
    mass = m1 + (m1 - m2) * s1 / (s2 - s1)
    e1 = m1 - m2
    e2 = m2 - m3
    converged = bool(abs(e1 - e2) <= _MASS_CONVERGENCE_REL * (abs(mass) + 1.0))
    return AdmMassResult(mass=float(mass), converged=converged,
                         estimates=(float(m3), float(m2), float(m1)))


def decay_exponent(metric: ConformalMetric) -> float:
    """Fitted decay rate q of |w - 1| ~ r^-q over the outer finite nodes."""
    if metric.chart != CHART_EXTERIOR:
        raise ValueError("decay exponents are read on the exterior chart")
    finite = np.isfinite(metric.grid.r)
    r = metric.grid.r[finite]
    dev = np.abs(metric.factor[finite] - 1.0)
    n_fit = max(4, len(r) // 4)
    r, dev = r[-n_fit:], dev[-n_fit:]
    pos = dev > 0.0
    if np.count_nonzero(pos) < 3:
        return np.inf  # deviation vanishes identically near infinity
    slope = np.polyfit(np.log(r[pos]), np.log(dev[pos]), 1)[0]
    return float(-slope)


# -- moduli-space membership ---------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of the vacuum + minimal-boundary + decay membership check."""

    is_member: bool
    max_scalar_curvature: float
    boundary_mean_curvature: float
    deviation_norm: float
    decay_divergent: bool
    tail_exponents: tuple
    adm: AdmMassResult
    tolerance: float
    failures: tuple

    def summary_lines(self):
        yield f"member: {'yes' if self.is_member else 'no'} (tol {self.tolerance:g})"
        yield f"max |R|: {self.max_scalar_curvature:.3e}"
        yield f"boundary H (toward infinity): {self.boundary_mean_curvature:.3e}"
        yield f"deviation norm: {self.deviation_norm:.6g}" + (
            " (divergent)" if self.decay_divergent else "")
        yield (f"ADM mass: {self.adm.mass:.12g}"
               f" ({'converged' if self.adm.converged else 'not converged'})")
        for f in self.failures:
            yield f"violation: {f}"


def verify_membership(metric: ConformalMetric, spec: WeightedNormSpec | None = None,
                      tol: float = 1e-6) -> VerificationReport:
    """Check scalar-flatness, minimal boundary, and weighted decay.

    The decay clause evaluates the weighted norm of w - 1 with a
    membership-grade spec (defaults to k = 2, p = 2, rho = -1/2) and
    requires the tail fit to be integrable.
    """
    if metric.chart != CHART_EXTERIOR:
        raise ValueError("membership verification runs on the exterior chart")
    spec = spec if spec is not None else WeightedNormSpec(k=2, p=2.0, rho=-0.5)
    spec.validate_for_membership()

    failures = []
    r_field = scalar_curvature(metric)
    max_r = float(np.max(np.abs(r_field.values)))
    if max_r > tol:
        failures.append(f"scalar curvature: max |R| = {max_r:.3e} > {tol:g}")

    h = mean_curvature(metric, TOWARD_INFINITY)
    if abs(h) > tol:
        failures.append(f"boundary not minimal: H = {h:.3e}")

    norm = weighted_norm(metric.deviation, spec)
    if norm.divergent:
        failures.append(
            f"deviation norm divergent (tail exponents {norm.tail_exponents})")

    mass = adm_mass(metric)
    if not mass.converged:
        failures.append("ADM mass estimate did not converge")

    return VerificationReport(
        is_member=not failures,
        max_scalar_curvature=max_r,
        boundary_mean_curvature=h,
        deviation_norm=norm.value,
        decay_divergent=norm.divergent,
        tail_exponents=norm.tail_exponents,
        adm=mass,
        tolerance=tol,
        failures=tuple(failures),
    )


def metric_distance(a: ConformalMetric, b: ConformalMetric,
                    spec: WeightedNormSpec | None = None) -> float:
    """Weighted-norm distance between two factors on a shared grid."""
    if not a.grid.same_layout(b.grid):
        raise ValueError("metrics live on different grids")
    if a.chart != b.chart:
        raise ValueError("metrics live on different charts")
    spec = spec if spec is not None else WeightedNormSpec(k=2, p=2.0, rho=-0.5)
    diff = ScalarField(a.grid, a.factor - b.factor, decay_order=-1.0)
    res = weighted_norm(diff, spec)
    if res.divergent:
        raise ValueError("factor difference is not in the weighted space")
    return res.value
