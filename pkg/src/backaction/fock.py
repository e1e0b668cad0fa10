"""Fixed-particle-number Fock space for bosons on a 1D lattice.

Basis states are occupation vectors ordered lexicographically *descending*,
so for two atoms on two sites the order is (2,0), (1,1), (0,2).  All
operators are assembled as CSR matrices from one-body terms
``sum_mn h[m, n] b_m^dag b_n``.

Quasimomenta live on the grid ``k_j a = 2 pi j / M`` with
``j = -M/2 + 1, ..., M/2`` (even M).  The plane-wave convention is
``b_m = M^{-1/2} sum_k exp(-i k m a) c_k``, hence
``c_k = M^{-1/2} sum_m exp(i k m a) b_m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

DIMENSION_CAP = 20_000

OPEN = "open"
PERIODIC = "periodic"


class DimensionError(ValueError):
    """Requested Hilbert space exceeds the configured cap."""

    def __init__(self, required: int, cap: int):
        super().__init__(f"Fock basis dimension {required} exceeds cap {cap}")
        self.required = required
        self.cap = cap


def _enumerate_desc(n_atoms: int, n_sites: int):
    if n_sites == 1:
        yield (n_atoms,)
        return
    for first in range(n_atoms, -1, -1):
        for rest in _enumerate_desc(n_atoms - first, n_sites - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Occupation-number basis for ``n_atoms`` bosons on ``n_sites`` sites."""

    n_atoms: int
    n_sites: int
    states: np.ndarray = field(repr=False)
    _rank_table: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def index_of(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(x) for x in s): i for i, s in enumerate(self.states)}

    def index(self, occupations) -> np.ndarray | int:
        """Dense index of one occupation vector or of each row of an array.

        Uses combinatorial ranking, so no hash lookup is needed.
        """
        occ = np.asarray(occupations, dtype=np.int64)
        single = occ.ndim == 1
        occ = np.atleast_2d(occ)
        if occ.shape[1] != self.n_sites:
            raise ValueError(f"expected {self.n_sites} sites, got {occ.shape[1]}")
        if np.any(occ < 0) or np.any(occ.sum(axis=1) != self.n_atoms):
            raise ValueError("occupation vector not in this basis")
        remaining = self.n_atoms - np.concatenate(
            [np.zeros((occ.shape[0], 1), dtype=np.int64), np.cumsum(occ, axis=1)[:, :-1]],
            axis=1,
        )
        sites = np.arange(self.n_sites)
        idx = self._rank_table[sites[None, :], remaining, occ].sum(axis=1)
        return int(idx[0]) if single else idx

    def state_vector(self, occupations) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(occupations)] = 1.0
        return psi

    def site_numbers(self) -> np.ndarray:
        return self.states


def build_basis(n_atoms: int, n_sites: int, cap: int = DIMENSION_CAP) -> FockBasis:
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    if n_atoms < 0:
        raise ValueError("n_atoms must be >= 0")
    dim = comb(n_atoms + n_sites - 1, n_atoms)
    if dim > cap:
        raise DimensionError(dim, cap)
    states = np.array(list(_enumerate_desc(n_atoms, n_sites)), dtype=np.int64)
    states = states.reshape(dim, n_sites)

    # count[r, s]: ways to put r atoms on s sites
    count = np.zeros((n_atoms + 1, n_sites + 1), dtype=np.int64)
    count[0, 0] = 1
    for s in range(1, n_sites + 1):
        for r in range(n_atoms + 1):
            count[r, s] = comb(r + s - 1, r)
    # table[i, R, v]: number of states sharing the prefix that put more than v
    # atoms on site i when R atoms remain, i.e. rank offset in descending order
    table = np.zeros((n_sites, n_atoms + 1, n_atoms + 1), dtype=np.int64)
    for i in range(n_sites):
        tail = n_sites - i - 1
        for R in range(n_atoms + 1):
            for v in range(R + 1):
                if tail == 0:
                    continue
                table[i, R, v] = sum(count[R - w, tail] for w in range(v + 1, R + 1))
    return FockBasis(n_atoms, n_sites, states, table)


@dataclass(frozen=True, eq=False)
class MatrixOperator:
    """Sparse matrix acting on a :class:`FockBasis`."""

    basis: FockBasis
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"operator shape {m.shape} does not match basis dim {self.basis.dim}")
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dag(self) -> "MatrixOperator":
        return MatrixOperator(self.basis, self.matrix.conj().T.tocsr(), self.hermitian)

    def hermiticity_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def _check(self, other: "MatrixOperator"):
        if other.basis is not self.basis:
            raise ValueError("operators act on different bases")

    def __add__(self, other):
        self._check(other)
        return MatrixOperator(self.basis, self.matrix + other.matrix, self.hermitian and other.hermitian)

    def __sub__(self, other):
        self._check(other)
        return MatrixOperator(self.basis, self.matrix - other.matrix, self.hermitian and other.hermitian)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        return MatrixOperator(self.basis, self.matrix * scalar, self.hermitian and scalar.imag == 0)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, MatrixOperator):
            self._check(other)
            return MatrixOperator(self.basis, self.matrix @ other.matrix)
        return self.matrix @ other

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.matrix @ psi))


def commutator_norm(a, b) -> float:
    """Largest absolute entry of ``[a, b]``."""
    A = a.matrix if isinstance(a, MatrixOperator) else sp.csr_matrix(a)
    B = b.matrix if isinstance(b, MatrixOperator) else sp.csr_matrix(b)
    c = A @ B - B @ A
    c.eliminate_zeros()
    return float(abs(c).max()) if c.nnz else 0.0


def one_body_operator(basis: FockBasis, h, hermitian: bool | None = None) -> MatrixOperator:
    """Assemble ``sum_mn h[m, n] b_m^dag b_n`` on a fixed-N basis."""
    h = np.asarray(h, dtype=complex)
    M = basis.n_sites
    if h.shape != (M, M):
        raise ValueError(f"single-particle matrix must be {M}x{M}")
    states = basis.states
    rows, cols, vals = [], [], []
    diag = states @ np.diag(h)
    nz = diag != 0
    rows.append(np.nonzero(nz)[0])
    cols.append(np.nonzero(nz)[0])
    vals.append(diag[nz])
    for m, n in zip(*np.nonzero(h)):
        if m == n:
            continue
        src = np.nonzero(states[:, n] > 0)[0]
        if src.size == 0:
            continue
        occ = states[src]
        amp = np.sqrt(occ[:, n] * (occ[:, m] + 1.0)) * h[m, n]
        new = occ.copy()
        new[:, n] -= 1
        new[:, m] += 1
        rows.append(basis.index(new))
        cols.append(src)
        vals.append(amp)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    ).tocsr()
    if hermitian is None:
        hermitian = bool(np.allclose(h, h.conj().T, atol=1e-14))
    return MatrixOperator(basis, mat, hermitian)


@dataclass(frozen=True)
class LatticeSpec:
    J: float = 1.0
    U: float = 0.0
    boundary: str = PERIODIC
    spacing: float = 1.0

    def __post_init__(self):
        if self.boundary not in (OPEN, PERIODIC):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        for name in ("J", "U", "spacing"):
            if not np.isreal(getattr(self, name)):
                raise ValueError(f"{name} must be real")


def bond_sites(n_sites: int, m: int, boundary: str) -> tuple[int, int]:
    if not 0 <= m < n_sites:
        raise IndexError(f"bond index {m} out of range for {n_sites} sites")
    if m == n_sites - 1:
        if boundary != PERIODIC:
            raise ValueError("bond wrapping to site 0 requires periodic boundary")
        return m, 0
    return m, m + 1


def n_bonds(n_sites: int, boundary: str) -> int:
    if n_sites == 1:
        return 0
    if boundary == PERIODIC and n_sites > 2:
        return n_sites
    return n_sites - 1


def hopping_matrix(n_sites: int, weights, boundary: str) -> np.ndarray:
    """Single-particle matrix of ``sum_m w_m (b_m^dag b_{m+1} + h.c.)``."""
    h = np.zeros((n_sites, n_sites), dtype=complex)
    for m, w in enumerate(weights):
        i, j = bond_sites(n_sites, m, boundary)
        h[i, j] += w
        h[j, i] += np.conj(w)
    return h


def hopping_operator(basis: FockBasis, m: int, boundary: str = PERIODIC) -> MatrixOperator:
    """``p_m = b_m^dag b_{m+1} + b_m b_{m+1}^dag``."""
    w = np.zeros(m + 1)
    w[m] = 1.0
    bond_sites(basis.n_sites, m, boundary)
    return one_body_operator(basis, hopping_matrix(basis.n_sites, w, boundary), hermitian=True)


def number_operator(basis: FockBasis, m: int) -> MatrixOperator:
    return MatrixOperator(basis, sp.diags(basis.states[:, m].astype(complex)).tocsr(), True)


def total_number_operator(basis: FockBasis) -> MatrixOperator:
    return MatrixOperator(basis, sp.diags(basis.states.sum(axis=1).astype(complex)).tocsr(), True)


def build_hamiltonian(basis: FockBasis, spec: LatticeSpec) -> MatrixOperator:
    """Bose-Hubbard ``H0 = -J sum_m p_m + U/2 sum_m n_m (n_m - 1)``."""
    M = basis.n_sites
    nb = n_bonds(M, spec.boundary)
    kinetic = one_body_operator(
        basis, -spec.J * hopping_matrix(M, np.ones(nb), spec.boundary), hermitian=True
    )
    occ = basis.states.astype(float)
    onsite = 0.5 * spec.U * (occ * (occ - 1)).sum(axis=1)
    return MatrixOperator(basis, kinetic.matrix + sp.diags(onsite.astype(complex)), True)


# ---- momentum space ------------------------------------------------------


def k_grid(n_sites: int) -> np.ndarray:
    """Integer momentum labels j with k_j a = 2 pi j / M."""
    M = n_sites
    if M % 2 == 0:
        return np.arange(-M // 2 + 1, M // 2 + 1)
    return np.arange(-(M - 1) // 2, (M - 1) // 2 + 1)


def wrap_k(j: int, n_sites: int) -> int:
    """Map any integer label onto the canonical grid."""
    grid = k_grid(n_sites)
    return int(grid[0] + (j - grid[0]) % n_sites)


def _check_k(j, n_sites: int) -> int:
    if not float(j).is_integer():
        raise ValueError(f"k label {j} is not on the 2pi/(Ma) grid")
    j = int(j)
    grid = k_grid(n_sites)
    if j < grid[0] or j > grid[-1]:
        raise ValueError(f"k label {j} outside grid [{grid[0]}, {grid[-1]}]")
    return j


def ka(j: int, n_sites: int) -> float:
    return 2 * np.pi * j / n_sites


def momentum_mode(n_sites: int, j: int) -> np.ndarray:
    """Site amplitudes u with c_k = sum_m u_m b_m."""
    m = np.arange(n_sites)
    return np.exp(1j * ka(j, n_sites) * m) / np.sqrt(n_sites)


def mode_bilinear(basis: FockBasis, u, v) -> MatrixOperator:
    """``A^dag B`` for modes ``A = sum u_m b_m`` and ``B = sum v_m b_m``."""
    h = np.outer(np.conj(u), v)
    return one_body_operator(basis, h)


def mode_number_operator(basis: FockBasis, u) -> MatrixOperator:
    op = mode_bilinear(basis, u, u)
    return MatrixOperator(basis, op.matrix, True)


def momentum_number_operator(basis: FockBasis, j) -> MatrixOperator:
    """``n_k = c_k^dag c_k``; ``j`` is k in units of 2 pi / (M a)."""
    j = _check_k(j, basis.n_sites)
    return mode_number_operator(basis, momentum_mode(basis.n_sites, j))


def momentum_bilinear(basis: FockBasis, j1: int, j2: int) -> MatrixOperator:
    """``c_{k1}^dag c_{k2}``."""
    M = basis.n_sites
    return mode_bilinear(basis, momentum_mode(M, wrap_k(j1, M)), momentum_mode(M, wrap_k(j2, M)))


def rbz(n_sites: int) -> np.ndarray:
    """Reduced-zone labels j = 1..M/2, i.e. 0 < k <= pi/a."""
    if n_sites % 2:
        raise ValueError("reduced Brillouin zone needs an even number of sites")
    return np.arange(1, n_sites // 2 + 1)


def partner(j: int, n_sites: int) -> int:
    """Label of k - pi/a."""
    return wrap_k(j - n_sites // 2, n_sites)


def conserved_observable(basis: FockBasis, j) -> MatrixOperator:
    """``O_k = n_k + n_{k - pi/a}`` for k in the reduced zone."""
    M = basis.n_sites
    if M % 2:
        raise ValueError("O_k requires an even number of sites")
    j = _check_k(j, M)
    if not 1 <= j <= M // 2:
        raise ValueError(f"k label {j} outside reduced zone 1..{M // 2}")
    h = np.outer(np.conj(momentum_mode(M, j)), momentum_mode(M, j))
    q = partner(j, M)
    h += np.outer(np.conj(momentum_mode(M, q)), momentum_mode(M, q))
    return one_body_operator(basis, h, hermitian=True)


def beta_modes(n_sites: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Site amplitudes of beta_k = (c_k + i c_{k-pi}) / sqrt2 and beta~_k."""
    ck = momentum_mode(n_sites, j)
    cq = momentum_mode(n_sites, partner(j, n_sites))
    return (ck + 1j * cq) / np.sqrt(2), (ck - 1j * cq) / np.sqrt(2)
