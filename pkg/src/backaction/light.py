"""Scattered-light operator a = C (D + B) for standing-wave probe and cavity modes.

Lengths are in units of the lattice period a and wavevectors in units of
1/a, so e.g. ``kx = np.pi`` means pi/a.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import (
    PERIODIC,
    FockBasis,
    MatrixOperator,
    hopping_matrix,
    n_bonds,
    one_body_operator,
)

W0 = "W0"
W1 = "W1"


@dataclass(frozen=True)
class WannierModel:
    """Gaussian lowest-band orbital ``w(x) = (pi s^2)^(-1/4) exp(-x^2 / 2 s^2)``.

    With this normalisation ``w^2`` integrates to one and its Fourier
    transform is ``exp(-k^2 s^2 / 4)``.
    """

    sigma: float = 0.2
    kind: str = "gaussian"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("Wannier width must be positive")
        if self.kind != "gaussian":
            raise ValueError(f"unsupported Wannier model {self.kind!r}")

    def w(self, x):
        s = self.sigma
        return (np.pi * s * s) ** -0.25 * np.exp(-np.asarray(x) ** 2 / (2 * s * s))


def fourier_overlap(model: WannierModel, which: str, k: float) -> float:
    """Fourier transform of W0 = w(x)^2 or W1 = w(x - a/2) w(x + a/2) at k."""
    s = model.sigma
    base = np.exp(-(k * s) ** 2 / 4)
    if which == W0:
        return float(base)
    if which == W1:
        return float(np.exp(-1.0 / (4 * s * s)) * base)
    raise ValueError(f"unknown overlap {which!r}")


@dataclass(frozen=True)
class BeamGeometry:
    """Probe (in) and cavity (out) standing waves ``cos(kx x + phi)``."""

    kx_in: float
    kx_out: float
    phi_in: float = 0.0
    phi_out: float = 0.0
    C: complex = 1.0
    K: int | None = None

    @property
    def k_plus(self) -> float:
        return self.kx_in + self.kx_out

    @property
    def k_minus(self) -> float:
        return self.kx_in - self.kx_out

    @property
    def phi_plus(self) -> float:
        return self.phi_in + self.phi_out

    @property
    def phi_minus(self) -> float:
        return self.phi_in - self.phi_out

    def mode_product(self, x):
        return np.cos(self.kx_out * x + self.phi_out) * np.cos(self.kx_in * x + self.phi_in)


@dataclass(frozen=True)
class CouplingCoefficients:
    diag: np.ndarray
    bond: np.ndarray


def uniform_geometry(model: WannierModel, C: complex = 1.0, K=None) -> BeamGeometry:
    """Probe and cavity at kx = pi/a with phases chosen so every J_mm vanishes.

    phi_+ = pi and phi_- = arccos[F[W0](2pi/a) / F[W0](0)].
    """
    ratio = fourier_overlap(model, W0, 2 * np.pi) / fourier_overlap(model, W0, 0.0)
    phi_minus = np.arccos(ratio)
    phi_plus = np.pi
    return BeamGeometry(
        np.pi, np.pi, (phi_plus + phi_minus) / 2, (phi_plus - phi_minus) / 2, C, K
    )


def alternating_geometry(phi_in: float = np.pi, C: complex = 1.0, K=None) -> BeamGeometry:
    """Probe along the lattice normal, cavity at kx = pi/a with sites on its nodes."""
    return BeamGeometry(0.0, np.pi, phi_in, np.pi / 2, C, K)


PRESETS = {
    "uniform-B1": uniform_geometry,
    "alternating-B2": alternating_geometry,
}


def coupling_coefficients(
    geom: BeamGeometry, model: WannierModel, n_sites: int, boundary: str = PERIODIC
) -> CouplingCoefficients:
    """J_{m,m} and J_{m,m+1} from the two-harmonic decomposition of the mode product.

    ``u_out u_in = [cos(k_- x + phi_-) + cos(k_+ x + phi_+)] / 2``, so each
    coefficient is a sum of two Fourier transforms of the Wannier overlaps,
    the bond terms being evaluated half a period off-site.
    """
    K = n_sites if geom.K is None else geom.K
    if not 0 < K <= n_sites:
        raise ValueError(f"illuminated sites K={K} must be in 1..{n_sites}")
    x = np.arange(K, dtype=float)
    diag = np.zeros(K)
    nb = n_bonds(n_sites, boundary) if K == n_sites else K - 1
    xb = np.arange(nb, dtype=float)
    bond = np.zeros(nb)
    for k, phi in ((geom.k_minus, geom.phi_minus), (geom.k_plus, geom.phi_plus)):
        diag += 0.5 * fourier_overlap(model, W0, k) * np.cos(k * x + phi)
        bond += 0.5 * fourier_overlap(model, W1, k) * np.cos(k * xb + k / 2 + phi)
    return CouplingCoefficients(diag, bond)


def build_D(coeffs: CouplingCoefficients, basis: FockBasis) -> MatrixOperator:
    """``D = sum_m J_mm n_m`` over the illuminated sites."""
    diag = np.asarray(coeffs.diag, dtype=float)
    if diag.size > basis.n_sites:
        raise ValueError("more diagonal coefficients than lattice sites")
    h = np.zeros((basis.n_sites, basis.n_sites))
    h[np.arange(diag.size), np.arange(diag.size)] = diag
    return one_body_operator(basis, h, hermitian=True)


def build_B(coeffs: CouplingCoefficients, basis: FockBasis, boundary: str = PERIODIC) -> MatrixOperator:
    """``B = sum_m J_{m,m+1} p_m`` over the illuminated bonds."""
    bond = np.asarray(coeffs.bond, dtype=float)
    if bond.size > n_bonds(basis.n_sites, boundary):
        raise ValueError(
            f"{bond.size} bond coefficients but only {n_bonds(basis.n_sites, boundary)} bonds"
        )
    h = hopping_matrix(basis.n_sites, bond, boundary)
    return one_body_operator(basis, h, hermitian=True)


def build_jump_operator(C: complex, D: MatrixOperator, B: MatrixOperator) -> MatrixOperator:
    if D.basis is not B.basis:
        raise ValueError("D and B act on different bases")
    a = (D + B) * C
    return MatrixOperator(a.basis, a.matrix, hermitian=False)


def b1_operator(basis: FockBasis, J1: float = 1.0, boundary: str = PERIODIC) -> MatrixOperator:
    """Uniform bond operator ``J1 sum_m p_m``."""
    nb = n_bonds(basis.n_sites, boundary)
    return build_B(CouplingCoefficients(np.zeros(0), np.full(nb, float(J1))), basis, boundary)


def b2_operator(basis: FockBasis, J2: float = 1.0, boundary: str = PERIODIC) -> MatrixOperator:
    """Alternating bond operator ``J2 sum_m (-1)^m p_m``."""
    nb = n_bonds(basis.n_sites, boundary)
    if boundary == PERIODIC and basis.n_sites % 2:
        raise ValueError("alternating pattern on a periodic ring needs an even number of sites")
    signs = (-1.0) ** np.arange(nb)
    return build_B(CouplingCoefficients(np.zeros(0), J2 * signs), basis, boundary)
