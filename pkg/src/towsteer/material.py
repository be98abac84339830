"""Orthotropic plane-stress constitutive law and its orientation dependence.

Voigt ordering is (11, 22, 12) with engineering shear strain, i.e. the
strain vector is {e11, e22, 2*e12}. The material stiffness in the global
frame is parameterized directly by the orientation vector components
(m, n) = (cos theta, sin theta), which keeps every entry polynomial in
(m, n) and therefore smooth through the full design chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OrthotropicLaw:
    """Plane-stress orthotropic elastic constants (Pa, dimensionless)."""

    e1: float
    e2: float
    g12: float
    nu12: float

    @property
    def nu21(self) -> float:
        # reciprocity keeps the stiffness matrix symmetric
        return self.nu12 * self.e2 / self.e1

    def __post_init__(self):
        if min(self.e1, self.e2, self.g12) <= 0:
            raise ValueError("elastic moduli must be positive")
        if 1.0 - self.nu12 * self.nu21 <= 0:
            raise ValueError("Poisson ratios violate 1 - nu12*nu21 > 0")


def isotropic(e: float, nu: float) -> OrthotropicLaw:
    """Isotropic degeneration, handy for sanity checks."""
    return OrthotropicLaw(e1=e, e2=e, g12=e / (2 * (1 + nu)), nu12=nu)


MATERIALS = {
    # carbon fiber epoxy used by the L-bracket benchmark
    "carbon-epoxy-140": OrthotropicLaw(e1=140e9, e2=9.5e9, g12=5.8e9, nu12=0.3),
    # softer carbon epoxy used by the simply supported beam benchmark
    "carbon-epoxy-100": OrthotropicLaw(e1=100e9, e2=5e9, g12=3e9, nu12=0.3),
}


def c0_plane_stress(law: OrthotropicLaw) -> np.ndarray:
    """Stiffness matrix in the material frame, shape (3, 3)."""
    d = 1.0 - law.nu12 * law.nu21
    return np.array([
        [law.e1 / d, law.nu12 * law.e2 / d, 0.0],
        [law.nu21 * law.e1 / d, law.e2 / d, 0.0],
        [0.0, 0.0, law.g12],
    ])


def q_of_mn(m, n) -> np.ndarray:
    """Strain/stress transformation matrix as a polynomial in (m, n).

    Broadcasts: scalar inputs give (3, 3); arrays of shape (...,) give
    (..., 3, 3). Even in (m, n), so opposite vectors transform alike.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    mm, nn, mn = m * m, n * n, m * n
    q = np.empty(m.shape + (3, 3))
    q[..., 0, 0] = mm
    q[..., 0, 1] = nn
    q[..., 0, 2] = mn
    q[..., 1, 0] = nn
    q[..., 1, 1] = mm
    q[..., 1, 2] = -mn
    q[..., 2, 0] = -2 * mn
    q[..., 2, 1] = 2 * mn
    q[..., 2, 2] = mm - nn
    return q


def cx(law: OrthotropicLaw, m, n) -> np.ndarray:
    """Global-frame stiffness for fibers along (m, n); broadcasts like q_of_mn."""
    q = q_of_mn(m, n)
    c0 = c0_plane_stress(law)
    return np.einsum("...ji,jk,...kl->...il", q, c0, q)


def _dq_of_mn(m, n):
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    z = np.zeros_like(m)
    dm = np.empty(m.shape + (3, 3))
    dm[..., 0, 0] = 2 * m
    dm[..., 0, 1] = z
    dm[..., 0, 2] = n
    dm[..., 1, 0] = z
    dm[..., 1, 1] = 2 * m
    dm[..., 1, 2] = -n
    dm[..., 2, 0] = -2 * n
    dm[..., 2, 1] = 2 * n
    dm[..., 2, 2] = 2 * m
    dn = np.empty(m.shape + (3, 3))
    dn[..., 0, 0] = z
    dn[..., 0, 1] = 2 * n
    dn[..., 0, 2] = m
    dn[..., 1, 0] = 2 * n
    dn[..., 1, 1] = z
    dn[..., 1, 2] = -m
    dn[..., 2, 0] = -2 * m
    dn[..., 2, 1] = 2 * m
    dn[..., 2, 2] = -2 * n
    return dm, dn


def dcx(law: OrthotropicLaw, m, n):
    """Analytic derivatives (dC/dm, dC/dn) of the global-frame stiffness.

    Each entry is a cubic polynomial in (m, n); the pair is odd under
    (m, n) -> (-m, -n) because the stiffness itself is even.
    """
    q = q_of_mn(m, n)
    dqm, dqn = _dq_of_mn(m, n)
    c0 = c0_plane_stress(law)
    c0q = np.einsum("jk,...kl->...jl", c0, q)
    dm = np.einsum("...ji,...jl->...il", dqm, c0q) + np.einsum("...ji,jk,...kl->...il", q, c0, dqm)
    dn = np.einsum("...ji,...jl->...il", dqn, c0q) + np.einsum("...ji,jk,...kl->...il", q, c0, dqn)
    return dm, dn
