"""Manufacturing fields and local constraints.

The curl of the orientation field bounds how sharply tows turn (radius
1/kappa); its divergence measures where neighboring paths spread apart or
converge, i.e. gaps and overlaps. Both are evaluated per element with finite
differences of the centroid field: central stencils where both axis
neighbors exist, first-order one-sided stencils at grid edges and mask
edges.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import StructuredGrid


@dataclass(frozen=True)
class Bounds:
    """Curvature / divergence magnitude limits (1/m)."""

    kappa_bar: float
    psi_bar: float

    def __post_init__(self):
        if self.kappa_bar <= 0 or self.psi_bar <= 0:
            raise ValueError("constraint bounds must be positive")

    @property
    def r_min(self) -> float:
        """Smallest admissible tow turning radius."""
        return 1.0 / self.kappa_bar


@dataclass(frozen=True)
class ProcessParams:
    """AFP machine limits: gap/overlap fractions and cut/add lengths (m)."""

    a_g: float
    a_o: float
    l_cut: float
    l_add: float

    def __post_init__(self):
        if self.l_cut <= 0 or self.l_add <= 0:
            raise ValueError("cut/add lengths must be positive")
        if not 0 <= self.a_o < 1:
            raise ValueError("overlap fraction must lie in [0, 1)")


class ProcessBounds(NamedTuple):
    psi_min: float
    psi_max: float
    psi_bar: float


def bounds_from_process(p: ProcessParams) -> ProcessBounds:
    """Convert process limits to divergence bounds.

    The log argument (1+a_g)/(2(1-a_o)) drops below 1 for tight gap limits,
    which inverts the sign of the nominal min/max pair; the formula is kept
    verbatim and a warning flags the inversion. Downstream only the
    symmetric magnitude bound is used.
    """
    arg = (1.0 + p.a_g) / (2.0 * (1.0 - p.a_o))
    psi_min = -np.log(arg) / p.l_cut
    psi_max = np.log(arg) / p.l_add
    if psi_min > psi_max:
        warnings.warn("process parameters give psi_min > psi_max "
                      "(log argument < 1); using magnitudes only",
                      stacklevel=2)
    return ProcessBounds(float(psi_min), float(psi_max),
                         float(max(abs(psi_min), abs(psi_max))))


def diff_operators(grid: StructuredGrid):
    """Sparse d/dx and d/dy acting on per-active-element centroid values.

    Interior rows are central differences over 2hx (2hy); rows missing a
    neighbor on one side fall back to first-order one-sided differences;
    rows with no neighbor on an axis are zero.
    """
    nx = grid.nx
    ids = grid.active_ids
    idx = grid.active_index
    i, j = ids % nx, ids // nx
    ec = np.arange(grid.n_active)

    def axis_op(lo_ok, hi_ok, lo_nb, hi_nb, h):
        rows, cols, vals = [], [], []
        both = lo_ok & hi_ok
        rows += [ec[both], ec[both]]
        cols += [hi_nb[both], lo_nb[both]]
        vals += [np.full(both.sum(), 0.5 / h), np.full(both.sum(), -0.5 / h)]
        hi_only = hi_ok & ~lo_ok
        rows += [ec[hi_only], ec[hi_only]]
        cols += [hi_nb[hi_only], ec[hi_only]]
        vals += [np.full(hi_only.sum(), 1.0 / h), np.full(hi_only.sum(), -1.0 / h)]
        lo_only = lo_ok & ~hi_ok
        rows += [ec[lo_only], ec[lo_only]]
        cols += [ec[lo_only], lo_nb[lo_only]]
        vals += [np.full(lo_only.sum(), 1.0 / h), np.full(lo_only.sum(), -1.0 / h)]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_active, grid.n_active)).tocsr()

    def lookup(offset, in_range):
        out = np.full(ids.size, -1, dtype=np.int64)
        sel = np.flatnonzero(in_range)
        out[sel] = idx[ids[sel] + offset]
        return out

    left = lookup(-1, i > 0)
    right = lookup(+1, i < nx - 1)
    down = lookup(-nx, j > 0)
    up = lookup(+nx, j < grid.ny - 1)
    dx = axis_op(left >= 0, right >= 0, left, right, grid.hx)
    dy = axis_op(down >= 0, up >= 0, down, up, grid.hy)
    return dx, dy


def curl_div_fd(grid: StructuredGrid, m: np.ndarray, n: np.ndarray,
                ops=None):
    """Per-element curl (kappa) and divergence (psi) of the field (m, n)."""
    dx, dy = ops if ops is not None else diff_operators(grid)
    kappa = dx @ n - dy @ m
    psi = dx @ m + dy @ n
    return kappa, psi


def assemble_constraints(kappa: np.ndarray, psi: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Stack the four signed ratio constraints into one vector of length 4 n_e.

    Block order: +kappa, -kappa, +psi, -psi, each as ratio minus one, so
    g <= 0 holds exactly when |kappa| <= kappa_bar and |psi| <= psi_bar.
    """
    rk = kappa / bounds.kappa_bar
    rp = psi / bounds.psi_bar
    return np.concatenate([rk - 1.0, -rk - 1.0, rp - 1.0, -rp - 1.0])


def constraint_gradients(grid: StructuredGrid, bounds: Bounds,
                         ops=None) -> sp.csr_matrix:
    """Jacobian of the constraint vector w.r.t. the stacked field [m; n].

    Shape (4 n_e, 2 n_e); constant for a fixed grid and bounds, so callers
    build it once per run.
    """
    dx, dy = ops if ops is not None else diff_operators(grid)
    jk = sp.hstack([-dy, dx], format="csr") * (1.0 / bounds.kappa_bar)
    jp = sp.hstack([dx, dy], format="csr") * (1.0 / bounds.psi_bar)
    return sp.vstack([jk, -jk, jp, -jp], format="csr")


@dataclass(frozen=True)
class RepresentabilityReport:
    """Whether the requested bounds fit within what the mesh can resolve."""

    passed: bool
    mesh_bound: float
    kappa_ratio: float
    psi_ratio: float


def representability_check(grid: StructuredGrid, bounds: Bounds) -> RepresentabilityReport:
    """Compare the bounds against the stencil ceiling 1/hx + 1/hy.

    Unit fields cannot produce finite-difference curl or divergence beyond
    that value, so a larger bound can never become active.
    """
    ceiling = 1.0 / grid.hx + 1.0 / grid.hy
    rk = bounds.kappa_bar / ceiling
    rp = bounds.psi_bar / ceiling
    return RepresentabilityReport(passed=(rk <= 1.0 and rp <= 1.0),
                                  mesh_bound=ceiling, kappa_ratio=rk, psi_ratio=rp)
