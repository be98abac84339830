"""Plane-stress Q4 finite elements on structured grids.

All cells are congruent rectangles, so the strain-displacement matrices are
computed once per grid. The element stiffness is linear in the 3x3 material
matrix; caching the "moment" tensor M[a, b] = sum_gp w |J| t B[a, :]^T B[b, :]
makes both the stiffness and its orientation derivatives cheap tensor
contractions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import OrthotropicLaw, cx, dcx
from .mesh import LoadCase, StructuredGrid


class SingularSystemError(RuntimeError):
    """Stiffness factorization failed; carries the estimated deficiency."""

    def __init__(self, deficient_dofs: int):
        self.deficient_dofs = deficient_dofs
        super().__init__(f"stiffness matrix is singular or indefinite "
                         f"({deficient_dofs} deficient dofs)")


_GP = 1.0 / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


class ElementKernel:
    """Per-Gauss-point B matrices and the stiffness moment tensor.

    Uses the standard 2x2 Gauss rule; valid for every cell of a grid since
    all cells share the same hx-by-hy rectangle geometry.
    """

    def __init__(self, hx: float, hy: float, thickness: float = 1.0):
        self.hx, self.hy, self.thickness = hx, hy, thickness
        det_j = hx * hy / 4.0
        b_mats = []
        for gx in (-_GP, _GP):
            for gy in (-_GP, _GP):
                dndx = 0.25 * _XI * (1 + _ETA * gy) * (2.0 / hx)
                dndy = 0.25 * _ETA * (1 + _XI * gx) * (2.0 / hy)
                b = np.zeros((3, 8))
                b[0, 0::2] = dndx
                b[1, 1::2] = dndy
                b[2, 0::2] = dndy
                b[2, 1::2] = dndx
                b_mats.append(b)
        self.b_mats = np.array(b_mats)                  # (4, 3, 8)
        self.gauss_scale = det_j * thickness            # unit Gauss weights
        self.moment = self.gauss_scale * np.einsum(
            "gai,gbj->abij", self.b_mats, self.b_mats)  # (3, 3, 8, 8)

    def b_center(self) -> np.ndarray:
        """Strain-displacement matrix at the element centroid."""
        dndx = 0.25 * _XI * (2.0 / self.hx)
        dndy = 0.25 * _ETA * (2.0 / self.hy)
        b = np.zeros((3, 8))
        b[0, 0::2] = dndx
        b[1, 1::2] = dndy
        b[2, 0::2] = dndy
        b[2, 1::2] = dndx
        return b


def element_stiffness(kernel: ElementKernel, law: OrthotropicLaw, m: float, n: float) -> np.ndarray:
    """8x8 stiffness of one cell with fibers along (m, n)."""
    return np.einsum("ab,abij->ij", cx(law, m, n), kernel.moment)


@dataclass(frozen=True)
class FemSolution:
    """Displacements, compliance f.u and the relative solver residual."""

    u: np.ndarray
    compliance: float
    residual: float


class FemProblem:
    """Cached assembly structure for repeated solves on one grid + load case."""

    def __init__(self, grid: StructuredGrid, load: LoadCase, law: OrthotropicLaw,
                 thickness: float = 1.0):
        self.grid = grid
        self.load = load
        self.law = law
        self.kernel = ElementKernel(grid.hx, grid.hy, thickness)

        used = np.unique(grid.element_dofs)
        orphan_load = np.setdiff1d(np.flatnonzero(load.f), used)
        if orphan_load.size:
            raise ValueError(f"load applied to dofs of inactive elements: "
                             f"{orphan_load[:8].tolist()}")
        free_map = np.full(grid.n_dofs, -1, dtype=np.int64)
        free = np.setdiff1d(used, load.fixed_dofs)
        free_map[free] = np.arange(free.size)
        self.free_dofs = free
        self.n_free = free.size

        dofs = grid.element_dofs
        rows = np.repeat(dofs, 8, axis=1).ravel()
        cols = np.tile(dofs, (1, 8)).ravel()
        rr, cc = free_map[rows], free_map[cols]
        self._keep = (rr >= 0) & (cc >= 0)
        self._rows = rr[self._keep]
        self._cols = cc[self._keep]
        self._f_free = load.f[free]

    def material_matrices(self, m: np.ndarray, n: np.ndarray) -> np.ndarray:
        return cx(self.law, np.asarray(m), np.asarray(n))

    def solve(self, m: np.ndarray, n: np.ndarray) -> FemSolution:
        """Assemble and solve for per-active-element orientation (m, n)."""
        c_all = self.material_matrices(m, n)
        ke_all = np.einsum("eab,abij->eij", c_all, self.kernel.moment)
        vals = ke_all.ravel()[self._keep]
        k = sp.coo_matrix((vals, (self._rows, self._cols)),
                          shape=(self.n_free, self.n_free)).tocsc()
        try:
            lu = spla.splu(k)
        except RuntimeError:
            raise SingularSystemError(self._deficiency(k)) from None
        u_diag = np.abs(lu.U.diagonal())
        if u_diag.size and u_diag.min() < 1e-12 * max(u_diag.max(), 1.0):
            raise SingularSystemError(int(np.sum(u_diag < 1e-12 * max(u_diag.max(), 1.0))))
        u_free = lu.solve(self._f_free)
        f_norm = np.linalg.norm(self._f_free)
        res = np.linalg.norm(k @ u_free - self._f_free) / f_norm if f_norm > 0 else 0.0
        u = np.zeros(self.grid.n_dofs)
        u[self.free_dofs] = u_free
        return FemSolution(u=u, compliance=float(self.load.f @ u), residual=float(res))

    def _deficiency(self, k) -> int:
        if self.n_free > 6000:
            return -1  # too large for a dense rank estimate
        w = np.linalg.eigvalsh(k.toarray())
        return int(np.sum(np.abs(w) < 1e-9 * max(np.abs(w).max(), 1.0)))

    def element_displacements(self, u: np.ndarray) -> np.ndarray:
        return u[self.grid.element_dofs]

    def compliance_gradient(self, solution: FemSolution, m: np.ndarray, n: np.ndarray):
        """Per-element (dc/dm, dc/dn) via the self-adjoint form -u_e' dK u_e."""
        ue = self.element_displacements(solution.u)
        energy = np.einsum("abij,ei,ej->eab", self.kernel.moment, ue, ue)
        dcm, dcn = dcx(self.law, np.asarray(m), np.asarray(n))
        return (-np.einsum("eab,eab->e", dcm, energy),
                -np.einsum("eab,eab->e", dcn, energy))


def assemble_solve(grid: StructuredGrid, load: LoadCase, law: OrthotropicLaw,
                   m: np.ndarray, n: np.ndarray, thickness: float = 1.0) -> FemSolution:
    """One-shot convenience wrapper around FemProblem.solve."""
    return FemProblem(grid, load, law, thickness).solve(m, n)


def compliance_gradient(problem: FemProblem, solution: FemSolution,
                        m: np.ndarray, n: np.ndarray):
    return problem.compliance_gradient(solution, m, n)


def dump_matrix_market(problem: FemProblem, m: np.ndarray, n: np.ndarray, path: str):
    """Debug export of the reduced stiffness in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    c_all = problem.material_matrices(m, n)
    ke_all = np.einsum("eab,abij->eij", c_all, problem.kernel.moment)
    vals = ke_all.ravel()[problem._keep]
    k = sp.coo_matrix((vals, (problem._rows, problem._cols)),
                      shape=(problem.n_free, problem.n_free))
    mmwrite(path, k)
