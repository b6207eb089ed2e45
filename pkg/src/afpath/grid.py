"""Radial node layouts for the exterior domain {r >= 1} and the unit-ball chart.

Two spacings are supported:

* ``uniform-in-s``: nodes equally spaced in the inverted coordinate s = 1/r.
  With r_outer = inf the final node sits at s = 0, which is spatial infinity;
  fields store their limiting value there.  The same node layout doubles as
  the compact unit-ball chart rho = s (boundary sphere at rho = 1, chart
  center at rho = 0), so compact-side code reuses RadialGrid unchanged.
* ``uniform-in-r``: nodes equally spaced in r on [1, r_outer], r_outer finite.

Node 0 is always the boundary sphere r = 1 and radii increase with the node
index.  Derivative helpers work in the node-index coordinate xi = i * step;
chart-specific wrappers apply the chain rule.  In the s-chart the flat radial
Laplacian collapses to s^4 d2/ds2, so fields linear in s (harmonic tails c/r)
are differentiated exactly; the PDE layer leans on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPACING_S = "uniform-in-s"
SPACING_R = "uniform-in-r"
_SPACINGS = (SPACING_S, SPACING_R)

MIN_NODES = 16


def s_nodes(n_nodes: int, s_min: float = 0.0) -> np.ndarray:
    # linspace keeps both endpoints exact, so s_min = 0 lands on 0.0 bitwise
    return np.linspace(1.0, float(s_min), int(n_nodes))


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Immutable node layout.  Arrays are index-aligned: r[i] = 1/s[i]."""

    r_inner: float
    r_outer: float
    n_nodes: int
    spacing: str
    r: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    step: float

    @property
    def is_compactified(self) -> bool:
        """True when the last node is s = 0, i.e. the layout reaches infinity."""
        return self.spacing == SPACING_S and self.s[-1] == 0.0

    @property
    def r_outer_finite(self) -> float:
        """Largest finite radius carried by a node."""
        rf = self.r[np.isfinite(self.r)]
        return float(rf[-1])

    def same_layout(self, other: "RadialGrid") -> bool:
        return (
            self.spacing == other.spacing
            and self.n_nodes == other.n_nodes
            and self.r_outer == other.r_outer
        )

    # -- chart derivatives ------------------------------------------------

    def deriv_r(self, values: np.ndarray) -> np.ndarray:
        """d/dr at every node, second order.

        s-chart: d/dr = s^2 d/dxi (xi the index coordinate), which vanishes
        at the infinity node exactly.
        """
        v = np.asarray(values, dtype=float)
        if self.spacing == SPACING_R:
            return d1_index(v, self.step)
        return self.s**2 * d1_index(v, self.step)

    def laplacian_flat(self, values: np.ndarray) -> np.ndarray:
        """Flat radial Laplacian u'' + 2 u'/r of nodal values."""
        v = np.asarray(values, dtype=float)
        if self.spacing == SPACING_R:
            return d2_index(v, self.step) + 2.0 / self.r * d1_index(v, self.step)
        # s = 1/r turns u'' + 2u'/r into exactly s^4 * u_ss
        return self.s**4 * d2_index(v, self.step)

    def boundary_deriv_r(self, values: np.ndarray) -> float:
        """One-sided d/dr at node 0 (r = 1), matching the solver's Robin row."""
        v = np.asarray(values, dtype=float)
        g = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * self.step)
        if self.spacing == SPACING_R:
            return float(g)
        # at s = 1 the chain rule factor s^2 is exactly 1
        return float(g)


def make_radial_grid(r_outer: float, n_nodes: int, spacing: str = SPACING_S) -> RadialGrid:
    """Build a grid with node[0] = 1.0 exactly.

    r_outer = inf is accepted for uniform-in-s and puts the last node at
    spatial infinity.
    """
    if spacing not in _SPACINGS:
        raise ValueError(f"spacing must be one of {_SPACINGS}, got {spacing!r}")
    n_nodes = int(n_nodes)
    if n_nodes < MIN_NODES:
        raise ValueError(f"n_nodes >= {MIN_NODES} required, got {n_nodes}")
    r_outer = float(r_outer)
    if np.isnan(r_outer) or r_outer <= 2.0:
        raise ValueError(f"r_outer must be a value > 2, got {r_outer}")

    if spacing == SPACING_R:
        if not np.isfinite(r_outer):
            raise ValueError("uniform-in-r needs a finite r_outer")
        r = np.linspace(1.0, r_outer, n_nodes)
        s = 1.0 / r
        step = (r_outer - 1.0) / (n_nodes - 1)
    else:
        s_min = 0.0 if np.isinf(r_outer) else 1.0 / r_outer
        s = s_nodes(n_nodes, s_min)
        with np.errstate(divide="ignore"):
            r = 1.0 / s
        r[0] = 1.0
        step = (1.0 - s_min) / (n_nodes - 1)

    if r[0] != 1.0:
        raise AssertionError("node[0] must be exactly 1.0")
    finite = r[np.isfinite(r)]
    if not np.all(np.diff(finite) > 0):
        raise AssertionError("nodes must increase strictly")
    grid = RadialGrid(
        r_inner=1.0,
        r_outer=r_outer,
        n_nodes=n_nodes,
        spacing=spacing,
        r=r,
        s=s,
        step=float(step),
    )
    grid.r.setflags(write=False)
    grid.s.setflags(write=False)
    return grid


def d1_index(values: np.ndarray, step: float) -> np.ndarray:
    """First derivative wrt the index coordinate, central inside, one-sided ends."""
    return np.gradient(np.asarray(values, dtype=float), step, edge_order=2)


def d2_index(values: np.ndarray, step: float) -> np.ndarray:
    """Second derivative wrt the index coordinate, O(step^2) everywhere."""
    v = np.asarray(values, dtype=float)
    if v.size < 4:
        raise ValueError("need at least 4 nodes for the one-sided stencil")
    h2 = step * step
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return out
