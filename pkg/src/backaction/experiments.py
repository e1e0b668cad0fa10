"""Assemble lattice, measurement and initial state from a RunConfig, plus
the reference scenarios used by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fock, light
from .config import ConfigError, RunConfig
from .subspace import (
    ProjectorSet,
    conserved_eigenspaces,
    eigenspace_projectors,
    find_emergent_subspaces,
    parity_subspaces,
    restricted_spectrum,
)


@dataclass
class System:
    basis: fock.FockBasis
    H0: fock.MatrixOperator
    B: fock.MatrixOperator  # Hermitian measured observable
    a: fock.MatrixOperator  # jump operator C (D + B)
    kappa: float
    C: complex
    psi0: np.ndarray
    preset: str

    @property
    def kappa_c2(self) -> float:
        return self.kappa * abs(self.C) ** 2


def parse_occupations(text, n_sites: int) -> tuple[int, ...]:
    if isinstance(text, str):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        occ = tuple(int(p) for p in parts)
    else:
        occ = tuple(int(x) for x in text)
    if len(occ) != n_sites:
        raise ConfigError(f"occupation {text!r} has {len(occ)} sites, lattice has {n_sites}")
    return occ


def center_block(n_atoms: int, n_sites: int) -> tuple[int, ...]:
    """One atom per site on a centred block, e.g. 0,0,1,1,1,1,0,0."""
    if n_atoms > n_sites:
        raise ConfigError("center-block preset needs n_atoms <= n_sites")
    start = (n_sites - n_atoms) // 2
    return tuple(1 if start <= m < start + n_atoms else 0 for m in range(n_sites))


def uniform_over_eigenspaces(measurement: ProjectorSet, seed: int = 0) -> np.ndarray:
    """Equal weight in every eigenspace; direction inside each is a fixed
    pseudo-random unit vector."""
    rng = np.random.default_rng(seed)
    psi = np.zeros(measurement.hilbert_dim, dtype=complex)
    for q in measurement.bases:
        c = rng.standard_normal(q.shape[1]) + 1j * rng.standard_normal(q.shape[1])
        v = q @ c
        psi += v / np.linalg.norm(v)
    return psi / np.linalg.norm(psi)


def initial_state(spec, basis: fock.FockBasis, measurement: fock.MatrixOperator | None = None) -> np.ndarray:
    M = basis.n_sites
    if isinstance(spec, dict):
        name = spec.get("preset")
        if name == "center-block":
            return basis.state_vector(center_block(basis.n_atoms, M))
        if name == "uniform-eigenspaces":
            if measurement is None:
                raise ConfigError("uniform-eigenspaces needs a measurement operator")
            return uniform_over_eigenspaces(eigenspace_projectors(measurement), spec.get("seed", 0))
        raise ConfigError(f"unknown initial-state preset {name!r}")
    if isinstance(spec, list) and spec and isinstance(spec[0], (list, tuple)) and len(spec[0]) == 2 \
            and not isinstance(spec[0][0], int):
        psi = np.zeros(basis.dim, dtype=complex)
        for amp, occ in spec:
            amp = complex(amp[0], amp[1]) if isinstance(amp, (list, tuple)) else complex(amp)
            psi[basis.index(parse_occupations(occ, M))] += amp
        n = np.linalg.norm(psi)
        if n == 0:
            raise ConfigError("superposition has zero norm")
        return psi / n
    occ = parse_occupations(spec, M)
    if sum(occ) != basis.n_atoms:
        raise ConfigError(f"initial occupation holds {sum(occ)} atoms, lattice expects {basis.n_atoms}")
    return basis.state_vector(occ)


def measurement_operators(cfg: RunConfig, basis: fock.FockBasis):
    """(D, B) for the configured geometry."""
    geo, lat = cfg.geometry, cfg.lattice
    zero = fock.MatrixOperator(basis, 0 * fock.total_number_operator(basis).matrix, True)
    if geo.source == "direct":
        if geo.preset == "uniform-B1":
            return zero, light.b1_operator(basis, geo.J1, lat.boundary)
        return zero, light.b2_operator(basis, geo.J2, lat.boundary)
    model = light.WannierModel(geo.sigma)
    if geo.preset == "uniform-B1":
        beams = light.uniform_geometry(model, geo.C_complex, geo.K)
    elif geo.preset == "alternating-B2":
        beams = light.alternating_geometry(np.pi if geo.phi_in is None else geo.phi_in, geo.C_complex, geo.K)
    else:
        beams = light.BeamGeometry(
            geo.kx_in, geo.kx_out, geo.phi_in or 0.0, geo.phi_out or 0.0, geo.C_complex, geo.K
        )
    coeffs = light.coupling_coefficients(beams, model, basis.n_sites, lat.boundary)
    return light.build_D(coeffs, basis), light.build_B(coeffs, basis, lat.boundary)


def build_system(cfg: RunConfig) -> System:
    lat = cfg.lattice
    basis = fock.build_basis(lat.n_atoms, lat.n_sites)
    H0 = fock.build_hamiltonian(basis, fock.LatticeSpec(lat.J, lat.U, lat.boundary))
    D, B = measurement_operators(cfg, basis)
    a = light.build_jump_operator(cfg.geometry.C_complex, D, B)
    observable = D + B
    psi0 = initial_state(cfg.initial, basis, observable)
    return System(basis, H0, observable, a, cfg.dynamics.kappa, cfg.geometry.C_complex, psi0, cfg.geometry.preset)


@dataclass
class SubspaceReport:
    measurement: ProjectorSet
    conserved: ProjectorSet | None
    emergent: ProjectorSet
    parity: ProjectorSet | None
    finest: ProjectorSet


def subspace_report(system: System) -> SubspaceReport:
    """Measurement, conserved and emergent projector sets for a system.

    For periodic even-M lattices the pair-occupation eigenspaces are used to
    pick Hamiltonian eigenvectors (momentum Fock states), which is what the
    emergent construction refers to; ``finest`` is the partition obtained when
    degenerate Hamiltonian eigenspaces are instead split along the
    measurement eigenspaces.
    """
    basis = system.basis
    P = eigenspace_projectors(system.B)
    R = None
    parity = None
    periodic_even = basis.n_sites % 2 == 0 and basis.n_sites > 2
    if periodic_even and fock.commutator_norm(system.H0, fock.conserved_observable(basis, 1)) < 1e-10:
        R = conserved_eigenspaces(basis)
        if system.preset == "alternating-B2":
            parity = parity_subspaces(basis, R)
    emergent = find_emergent_subspaces(P, system.H0, refine=R)
    finest = find_emergent_subspaces(P, system.H0, refine=P)
    return SubspaceReport(P, R, emergent, parity, finest)


SQ2 = np.sqrt(2.0)
_A = (1 + SQ2) / SQ2
_B = (1 - SQ2) / SQ2
TABLE_S1_REFERENCE = [
    ((2, 0, 0, 0), [-SQ2, 0.0, SQ2]),
    ((1, 1, 0, 0), [-_A, -_B, _B, _A]),
    ((1, 0, 1, 0), [-SQ2, 0.0, SQ2]),
    ((1, 0, 0, 1), [-1 / SQ2, 1 / SQ2]),
    ((0, 2, 0, 0), [-2.0, 0.0, 2.0]),
    ((0, 1, 1, 0), [-_A, -_B, _B, _A]),
    ((0, 1, 0, 1), [-1.0, 1.0]),
    ((0, 0, 2, 0), [-SQ2, 0.0, SQ2]),
    ((0, 0, 1, 1), [-1 / SQ2, 1 / SQ2]),
    ((0, 0, 0, 2), [0.0]),
]


def table_s1(n_atoms: int = 2, n_sites: int = 8, J2: float = 1.0) -> list[dict]:
    """Pair-occupation spaces and the alternating-bond eigenvalues inside each,
    in units of 2 J2."""
    basis = fock.build_basis(n_atoms, n_sites)
    B2 = light.b2_operator(basis, J2)
    R = conserved_eigenspaces(basis)
    rows = []
    for lab, q in zip(R.labels, R.bases):
        vals = restricted_spectrum(B2, q, scale=2 * J2)
        rows.append(
            {
                "name": lab["name"],
                "occupations": lab["occupations"],
                "dimension": q.shape[1],
                "eigenvalues_2J2": [0.0 if abs(v) < 1e-12 else v for v in vals],
            }
        )
    return rows


def compare_table_s1(rows: list[dict]) -> float:
    """Largest deviation from the reference table; inf on a structural mismatch."""
    if len(rows) != len(TABLE_S1_REFERENCE):
        return float("inf")
    worst = 0.0
    for row, (occ, ref) in zip(rows, TABLE_S1_REFERENCE):
        got = np.sort(row["eigenvalues_2J2"])
        if tuple(row["occupations"]) != occ or got.size != len(ref):
            return float("inf")
        worst = max(worst, float(np.abs(got - np.sort(ref)).max()))
    return worst


def fig2_config(**overrides) -> RunConfig:
    cfg = RunConfig()
    cfg.lattice.n_atoms, cfg.lattice.n_sites = 4, 8
    cfg.initial = "0,0,1,1,1,1,0,0"
    for k, v in overrides.items():
        setattr(cfg.dynamics, k, v)
    return cfg.validate()


def qnd_config(**overrides) -> RunConfig:
    cfg = RunConfig()
    cfg.lattice.n_atoms, cfg.lattice.n_sites = 2, 4
    cfg.geometry.preset = "uniform-B1"
    cfg.initial = {"preset": "uniform-eigenspaces", "seed": 0}
    cfg.dynamics.total_time = 10.0
    cfg.dynamics.record_interval = 0.5
    cfg.dynamics.n_trajectories = 2000
    cfg.analysis.subspaces = ["measurement"]
    for k, v in overrides.items():
        setattr(cfg.dynamics, k, v)
    return cfg.validate()


def table_config() -> RunConfig:
    cfg = RunConfig()
    cfg.lattice.n_atoms, cfg.lattice.n_sites = 2, 8
    cfg.initial = "0,0,0,1,1,0,0,0"
    return cfg.validate()


DEFAULT_CONFIGS = {
    "trajectories": fig2_config,
    "master": fig2_config,
    "subspaces": fig2_config,
    "table-s1": table_config,
    "qnd-check": qnd_config,
}


def pair_occupation_observable(basis: fock.FockBasis):
    """Function psi -> [<O_k>] over the reduced zone, and the k a / pi labels."""
    js = fock.rbz(basis.n_sites)
    ops = [fock.conserved_observable(basis, j).matrix for j in js]

    def fn(psi):
        return np.array([np.vdot(psi, op @ psi).real for op in ops])

    return fn, [float(fock.ka(j, basis.n_sites) / np.pi) for j in js]
