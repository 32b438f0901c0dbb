"""Composite Gauss-Kronrod integration over fixed grids.

All affinity, covariance and influence integrals in this package are computed
on a fixed grid built once per problem: the integrand is evaluated exactly once
per node and re-used across optimizer iterations.  Each subdivision carries the
15-point Kronrod rule with its embedded 7-point Gauss rule, so every integral
comes with a cheap error estimate |kronrod - gauss|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SvymhdeError

# 15-point Kronrod extension of the 7-point Gauss-Legendre rule on [-1, 1].
# Positive half of the node set; the rule is symmetric about 0.
_XK_HALF = np.array([
    0.000000000000000000000000000000000,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_WK_HALF = np.array([
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
# Gauss weights for the embedded rule; nonzero only on the odd-indexed
# (Gauss-Legendre) nodes of the half set above.
_WG_HALF = np.array([
    0.417959183673469387755102040816327,
    0.0,
    0.381830050505118944950369775488975,
    0.0,
    0.279705391489276667901467771423780,
    0.0,
    0.129484966168869693270611432679082,
    0.0,
])

# Full 15-node rule on [-1, 1], nodes ascending.
_XK = np.concatenate([-_XK_HALF[:0:-1], _XK_HALF])
_WK = np.concatenate([_WK_HALF[:0:-1], _WK_HALF])
_WG = np.concatenate([_WG_HALF[:0:-1], _WG_HALF])

NODES_PER_SUBDIVISION = _XK.size


@dataclass(frozen=True, eq=False)
class QuadGrid:
    """A fixed composite Gauss-Kronrod grid on [a, b].

    ``nodes`` holds the flattened Kronrod nodes of every subdivision;
    ``kronrod_weights`` and ``gauss_weights`` match it element-wise
    (Gauss weights are zero on Kronrod-only nodes).
    """

    a: float
    b: float
    subdivisions: int
    nodes: np.ndarray = field(repr=False)
    gauss_weights: np.ndarray = field(repr=False)
    kronrod_weights: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class QuadResult:
    kronrod: float
    gauss: float
    err_est: float


def _grid_from_edges(edges: np.ndarray) -> QuadGrid:
    lo = edges[:-1]
    hi = edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * _XK[None, :]).ravel()
    wk = (half[:, None] * _WK[None, :]).ravel()
    wg = (half[:, None] * _WG[None, :]).ravel()
    return QuadGrid(
        a=float(edges[0]),
        b=float(edges[-1]),
        subdivisions=edges.size - 1,
        nodes=nodes,
        gauss_weights=wg,
        kronrod_weights=wk,
    )


def build_grid(a: float, b: float, subdivisions: int) -> QuadGrid:
    """Equal-width composite grid with ``subdivisions`` G7-K15 panels."""
    if not a < b:
        raise SvymhdeError(f"invalid interval [{a}, {b}]: need a < b")
    if subdivisions < 1:
        raise SvymhdeError("subdivisions must be >= 1")
    edges = np.linspace(a, b, subdivisions + 1)
    return _grid_from_edges(edges)


def build_refined_grid(a, b, subdivisions, refine=()):
    """Equal-width grid plus extra panels inside selected windows.

    ``refine`` is a sequence of ``(lo, hi, count)`` triples; each window is cut
    into ``count`` additional equal panels (clipped to [a, b]).  The grid stays
    fixed: refinement is decided up front, never adaptively.
    """
    if not a < b:
        raise SvymhdeError(f"invalid interval [{a}, {b}]: need a < b")
    edges = [np.linspace(a, b, subdivisions + 1)]
    for lo, hi, count in refine:
        lo = max(float(lo), a)
        hi = min(float(hi), b)
        if lo < hi and count >= 1:
            edges.append(np.linspace(lo, hi, int(count) + 1))
    merged = np.unique(np.concatenate(edges))
    return _grid_from_edges(merged)


def integrate(values, grid: QuadGrid) -> QuadResult:
    """Integrate node values over the grid.

    Returns the Kronrod estimate, the embedded Gauss estimate and the standard
    embedded-rule error proxy |kronrod - gauss|.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.nodes.shape:
        raise SvymhdeError(
            f"values shape {values.shape} does not match grid with "
            f"{grid.n_nodes} nodes"
        )
    kron = float(grid.kronrod_weights @ values)
    gauss = float(grid.gauss_weights @ values)
    return QuadResult(kronrod=kron, gauss=gauss, err_est=abs(kron - gauss))


def integrate_function(f, grid: QuadGrid) -> QuadResult:
    """Convenience wrapper: evaluate ``f`` on the nodes and integrate."""
    return integrate(f(grid.nodes), grid)
