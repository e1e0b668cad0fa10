"""Photodetection trajectories and the Lindblad master equation.

Trajectories use the waiting-time unravelling: the unnormalised state
evolves under ``H_eff = H0 - i kappa a^dag a`` until its squared norm drops
to a uniform random threshold, at which point ``a`` is applied.  The jump
rate is therefore ``2 kappa <a^dag a>``, matching the ``2 kappa`` prefactor of
the master equation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import brentq

from .fock import FockBasis, MatrixOperator
from .subspace import IncompleteProjectorSet, ProjectorSet

logger = logging.getLogger(__name__)

DENSE_PROPAGATOR_MAX_DIM = 2000
MASTER_DIMENSION_CAP = 400
STEP_NORM = 0.05


class DarkStateEdge(RuntimeError):
    """Threshold crossing reached while ``a psi`` is numerically zero."""


class ToleranceError(RuntimeError):
    """A conserved quantity drifted beyond its tolerance."""


def _mat(op):
    if isinstance(op, MatrixOperator):
        return op.matrix
    return sp.csr_matrix(op) if not isinstance(op, np.ndarray) else op


def norm_bound(A) -> float:
    """Cheap upper bound on the spectral norm: sqrt(||A||_1 ||A||_inf)."""
    if sp.issparse(A):
        a = abs(A)
        return float(np.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max())) if A.nnz else 0.0
    a = np.abs(A)
    return float(np.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max())) if a.size else 0.0


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream keyed by (ensemble seed, trajectory index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass(frozen=True)
class TrajectoryConfig:
    kappa: float
    total_time: float
    max_dt: float = 0.01
    seed: int = 0
    record_stride: int = 10
    record_interval: float | None = None

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if self.max_dt <= 0:
            raise ValueError("max_dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.record_interval is not None:
            ratio = self.total_time / self.record_interval
            if self.record_interval <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError("record_interval must divide total_time")


@dataclass
class Trajectory:
    """Snapshots of one photodetection record."""

    seed: int
    index: int
    times: np.ndarray
    counts: np.ndarray
    jump_times: list[float]
    states: np.ndarray | None = None
    series: dict[str, np.ndarray] = field(default_factory=dict)
    dt: float = 0.0

    @property
    def photocount(self) -> int:
        return len(self.jump_times)


class _Propagator:
    """exp(-i H_eff t) on vectors: cached matrix for full steps, Taylor series
    for partial ones."""

    def __init__(self, h_eff, dt: float):
        self.dt = dt
        self.h = h_eff
        self.full = None
        if h_eff.shape[0] <= DENSE_PROPAGATOR_MAX_DIM:
            dense = h_eff.toarray() if sp.issparse(h_eff) else np.asarray(h_eff)
            self.h = dense
            self.full = la.expm(-1j * dt * dense)

    def step(self, psi):
        if self.full is not None:
            return self.full @ psi
        return self.partial(psi, self.dt)

    def partial(self, psi, tau: float):
        out = psi.copy()
        term = psi
        scale = np.linalg.norm(psi)
        for n in range(1, 60):
            term = (-1j * tau / n) * (self.h @ term)
            out = out + term
            if np.linalg.norm(term) <= 1e-17 * scale:
                break
        return out


def effective_hamiltonian(H0, a, kappa: float):
    H = _mat(H0)
    A = _mat(a)
    return (H - 1j * kappa * (A.conj().T @ A)).tocsr() if sp.issparse(H) else H - 1j * kappa * (A.conj().T @ A)


def step_size(h_eff, cfg: TrajectoryConfig) -> tuple[float, int, int]:
    """Uniform step with ||H_eff|| dt <= 0.05 landing exactly on total_time.

    Returns (dt, n_steps, stride).  With ``record_interval`` set, dt also
    divides the interval so snapshots fall on its multiples.
    """
    bound = norm_bound(h_eff)
    dt = cfg.max_dt if bound == 0 else min(cfg.max_dt, STEP_NORM / bound)
    if cfg.record_interval is not None:
        per = int(np.ceil(cfg.record_interval / dt - 1e-12))
        n_rec = int(round(cfg.total_time / cfg.record_interval))
        return cfg.record_interval / per, per * n_rec, per
    n = int(np.ceil(cfg.total_time / dt - 1e-12))
    return cfg.total_time / n, n, cfg.record_stride


Observables = dict[str, Callable[[np.ndarray], object]]


def run_trajectory(
    psi0: np.ndarray,
    H0,
    a,
    cfg: TrajectoryConfig,
    index: int = 0,
    observables: Observables | None = None,
    store_states: bool = True,
    on_snapshot: Callable[[float, np.ndarray, int], None] | None = None,
    _prop: _Propagator | None = None,
) -> Trajectory:
    """Simulate one photodetection record.

    Snapshots are taken every ``cfg.record_stride`` steps (plus t=0).  Each
    stored state is normalised; ``observables`` maps names to functions of
    the normalised state evaluated at every snapshot.
    """
    psi = np.asarray(psi0, dtype=complex).copy()
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-8:
        raise ValueError(f"initial state norm {nrm} != 1")
    A = _mat(a)
    h_eff = effective_hamiltonian(H0, a, cfg.kappa)
    dt, n_steps, stride = step_size(h_eff, cfg)
    prop = _prop if _prop is not None and abs(_prop.dt - dt) < 1e-15 else _Propagator(h_eff, dt)
    rng = trajectory_rng(cfg.seed, index)

    times, counts, states = [], [], []
    series: dict[str, list] = {k: [] for k in (observables or {})}
    jumps: list[float] = []

    def record(t, vec):
        unit = vec / np.linalg.norm(vec)
        times.append(t)
        counts.append(len(jumps))
        if store_states:
            states.append(unit)
        for name, fn in (observables or {}).items():
            series[name].append(fn(unit))
        if on_snapshot is not None:
            on_snapshot(t, unit, len(jumps))

    record(0.0, psi)
    threshold = rng.random()
    t = 0.0
    for step in range(n_steps):
        t_end = (step + 1) * dt
        on_grid = True
        while True:
            h = t_end - t
            nxt = prop.step(psi) if on_grid else prop.partial(psi, h)
            if np.vdot(nxt, nxt).real > threshold:
                psi, t = nxt, t_end
                break
            start = psi

            def excess(tau):
                v = prop.partial(start, tau)
                return np.vdot(v, v).real - threshold

            tau = brentq(excess, 0.0, h, xtol=1e-10 * max(h, 1e-300), rtol=1e-14)
            psi = prop.partial(start, tau)
            t = t + tau
            jumped = A @ psi
            n2 = np.vdot(jumped, jumped).real
            if n2 < 1e-14 * np.vdot(psi, psi).real:
                raise DarkStateEdge(
                    f"threshold crossing at t={t:.6g} with ||a psi||^2={n2:.3e}; "
                    "check step size or tolerance settings"
                )
            psi = jumped / np.sqrt(n2)
            jumps.append(t)
            threshold = rng.random()
            on_grid = False
            if t >= t_end:
                break
        if (step + 1) % stride == 0 or step == n_steps - 1:
            if not times or times[-1] < t_end - 1e-12:
                record(round(t_end / dt) * dt if cfg.record_interval is None
                       else (step + 1) // stride * cfg.record_interval, psi)

    return Trajectory(
        seed=cfg.seed,
        index=index,
        times=np.array(times),
        counts=np.array(counts),
        jump_times=jumps,
        states=np.array(states) if store_states else None,
        series={k: np.array(v) for k, v in series.items()},
        dt=dt,
    )


def run_ensemble(
    psi0,
    H0,
    a,
    cfg: TrajectoryConfig,
    n_trajectories: int,
    threads: int = 1,
    observables: Observables | None = None,
    store_states: bool = False,
    start_index: int = 0,
) -> list[Trajectory]:
    """Independent trajectories ``start_index .. start_index + n - 1``.

    Each trajectory draws from its own (seed, index) stream, so results do
    not depend on ``threads``.
    """
    h_eff = effective_hamiltonian(H0, a, cfg.kappa)
    dt, _, _ = step_size(h_eff, cfg)
    prop = _Propagator(h_eff, dt)

    def job(i):
        return run_trajectory(psi0, H0, a, cfg, i, observables, store_states, _prop=prop)

    idx = range(start_index, start_index + n_trajectories)
    if threads <= 1:
        return [job(i) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, idx))


# ---- master equation ------------------------------------------------------


@dataclass
class DensityMatrix:
    basis: FockBasis | None
    rho: np.ndarray

    @classmethod
    def pure(cls, psi, basis=None):
        psi = np.asarray(psi, dtype=complex)
        return cls(basis, np.outer(psi, psi.conj()))

    def defects(self) -> dict[str, float]:
        r = self.rho
        return {
            "hermiticity": float(np.abs(r - r.conj().T).max()),
            "trace": float(abs(np.trace(r) - 1)),
            "min_eigenvalue": float(la.eigvalsh((r + r.conj().T) / 2).min()),
        }

    def check(self, herm_tol=1e-10, trace_tol=1e-8, pos_tol=1e-10):
        d = self.defects()
        if d["hermiticity"] > herm_tol or d["trace"] > trace_tol or d["min_eigenvalue"] < -pos_tol:
            raise ToleranceError(f"invalid density matrix: {d}")


def lindblad_rhs(rho, H0, a, kappa: float):
    """``-i[H0, rho] + 2 kappa (a rho a^dag - {a^dag a, rho} / 2)`` for any square rho."""
    H = _mat(H0)
    A = _mat(a)
    Ad = A.conj().T
    AdA = Ad @ A
    out = -1j * (H @ rho - (rho @ H if not sp.issparse(H) else (H.T @ rho.T).T))
    arho = A @ rho
    arad = A @ (A @ rho.conj().T).conj().T if sp.issparse(A) else arho @ Ad
    out = out + 2 * kappa * arad
    rho_ada = (AdA.T @ rho.T).T if sp.issparse(AdA) else rho @ AdA
    out = out - kappa * (AdA @ rho + rho_ada)
    return out


class _SectorPropagator:
    """Fixed-step RK4 for a generator that is block diagonal over sectors.

    When H0 and a leave each sector invariant, every pair block
    ``rho_ij = Q_i^dag rho Q_j`` evolves on its own under
    ``L_ij X = G_i X + X G_j^dag + 2 kappa A_i X A_j^dag`` with
    ``G = -i H0 - kappa a^dag a``.  One RK4 step is the polynomial
    ``1 + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24`` of that map, so n steps are
    its n-th power; pairs with i > j follow from Hermiticity.
    """

    def __init__(self, H0, a, kappa: float, sectors: ProjectorSet, dt: float, tol: float = 1e-10):
        V = np.concatenate(sectors.bases, axis=1)
        if V.shape[0] != V.shape[1]:
            raise IncompleteProjectorSet("sector bases do not span the Hilbert space")
        self.V = V
        H = V.conj().T @ (_mat(H0) @ V)
        Aop = V.conj().T @ (_mat(a) @ V)
        edges = np.cumsum([0] + sectors.dims)
        self.slices = [slice(edges[i], edges[i + 1]) for i in range(len(sectors))]
        mask = np.zeros(H.shape, dtype=bool)
        for s in self.slices:
            mask[s, s] = True
        scale = max(1.0, np.abs(H).max(), np.abs(Aop).max())
        leak = max(np.abs(H[~mask]).max(initial=0.0), np.abs(Aop[~mask]).max(initial=0.0))
        if leak > tol * scale:
            raise ValueError(f"sectors are not invariant under H0 and a (leak {leak:.2e})")
        G = -1j * H - kappa * (Aop.conj().T @ Aop)
        self.G = [G[s, s] for s in self.slices]
        self.A = [Aop[s, s] for s in self.slices]
        self.kappa, self.dt = kappa, dt
        self.pairs = [(i, j) for i in range(len(self.slices)) for j in range(i, len(self.slices))]
        self._step: dict = {}
        self._powers: dict = {}

    def _step_matrix(self, i, j):
        m = self._step.get((i, j))
        if m is None:
            di, dj = self.G[i].shape[0], self.G[j].shape[0]
            # row-major vec: vec(X Y Z) = (X kron Z^T) vec(Y)
            L = (np.kron(self.G[i], np.eye(dj)) + np.kron(np.eye(di), self.G[j].conj())
                 + 2 * self.kappa * np.kron(self.A[i], self.A[j].conj()))
            hL = self.dt * L
            eye = np.eye(di * dj)
            m = eye + hL @ (eye + hL @ (eye + hL @ (eye + hL / 4) / 3) / 2)
            self._step[(i, j)] = m
        return m

    def _power(self, i, j, n):
        key = (i, j, n)
        m = self._powers.get(key)
        if m is None:
            m = np.linalg.matrix_power(self._step_matrix(i, j), n)
            self._powers[key] = m
        return m

    def split(self, rho):
        r = self.V.conj().T @ rho @ self.V
        return {(i, j): r[self.slices[i], self.slices[j]].ravel() for i, j in self.pairs}

    def advance(self, blocks, n: int):
        if n == 0:
            return blocks
        out = {}
        for (i, j), v in blocks.items():
            out[(i, j)] = self._power(i, j, n) @ v
        # keep one cached power per pair besides the step itself
        stale = [k for k in self._powers if k[2] != n]
        for k in stale:
            del self._powers[k]
        return out

    def assemble(self, blocks):
        d = self.V.shape[0]
        r = np.empty((d, d), dtype=complex)
        for (i, j), v in blocks.items():
            si, sj = self.slices[i], self.slices[j]
            b = v.reshape(si.stop - si.start, sj.stop - sj.start)
            r[si, sj] = b
            if i != j:
                r[sj, si] = b.conj().T
        return self.V @ r @ self.V.conj().T


@dataclass
class MasterResult:
    times: np.ndarray
    states: list[np.ndarray]
    trace_drift: float
    hermiticity_defect: float
    dt: float


def run_master(
    rho0: DensityMatrix,
    H0,
    a,
    kappa: float,
    total_time: float,
    dt: float = 0.02,
    record_every: int | None = None,
    record_times=None,
    sectors: ProjectorSet | None = None,
    on_snapshot: Callable[[float, np.ndarray], None] | None = None,
    store: bool = True,
    trace_tol: float = 1e-8,
    herm_tol: float = 1e-10,
) -> MasterResult:
    """Fixed-step RK4 integration of the master equation.

    ``sectors`` optionally supplies subspaces invariant under H0 and a (for
    example the pair-occupation eigenspaces); the same RK4 steps are then
    applied block by block, which is much cheaper.  Snapshots are taken every
    ``record_every`` steps and/or at the steps nearest to ``record_times``;
    they are always returned in the Fock basis.
    """
    rho = np.array(rho0.rho, dtype=complex)
    if rho.shape[0] > MASTER_DIMENSION_CAP:
        raise ValueError(f"dimension {rho.shape[0]} exceeds master-equation cap {MASTER_DIMENSION_CAP}")
    rho0.check()
    n_steps = int(np.ceil(total_time / dt - 1e-12))
    dt = total_time / n_steps
    marks = {0, n_steps}
    if record_every:
        marks.update(range(0, n_steps + 1, record_every))
    if record_times is not None:
        marks.update(min(n_steps, int(round(t / dt))) for t in record_times)
    marks = sorted(marks)

    times, states = [], []
    worst_trace = worst_herm = 0.0

    def snap(step, full):
        nonlocal worst_trace, worst_herm
        tr = abs(np.trace(full) - 1)
        herm = float(np.abs(full - full.conj().T).max())
        worst_trace = max(worst_trace, tr)
        worst_herm = max(worst_herm, herm)
        if tr > trace_tol or herm > herm_tol:
            raise ToleranceError(
                f"step {step} (t={step * dt:.6g}): trace drift {tr:.3e}, hermiticity {herm:.3e}"
            )
        times.append(step * dt)
        if store:
            states.append(full)
        if on_snapshot is not None:
            on_snapshot(step * dt, full)

    if sectors is not None:
        prop = _SectorPropagator(H0, a, kappa, sectors, dt)
        blocks = prop.split(rho)
        snap(0, rho)
        for prev, step in zip(marks[:-1], marks[1:]):
            blocks = prop.advance(blocks, step - prev)
            snap(step, prop.assemble(blocks))
        return MasterResult(np.array(times), states, worst_trace, worst_herm, dt)

    H, A = _mat(H0), _mat(a)

    def f(r):
        return lindblad_rhs(r, H, A, kappa)

    snap(0, rho)
    todo = set(marks)
    for step in range(1, n_steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step in todo:
            snap(step, rho)
    return MasterResult(np.array(times), states, worst_trace, worst_herm, dt)


def block_decompose(rho, projectors: ProjectorSet, tol: float = 1e-10) -> np.ndarray:
    """Frobenius norms ``||P_M rho P_N||`` for every pair of projectors."""
    r = rho.rho if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if sum(projectors.dims) != r.shape[0]:
        raise IncompleteProjectorSet(
            f"projector dimensions sum to {sum(projectors.dims)}, Hilbert space has {r.shape[0]}"
        )
    V = np.concatenate(projectors.bases, axis=1)
    if np.abs(V.conj().T @ V - np.eye(V.shape[1])).max() > tol:
        raise IncompleteProjectorSet("projectors are not mutually orthogonal")
    n = len(projectors)
    out = np.zeros((n, n))
    left = [q.conj().T @ r for q in projectors.bases]
    for i in range(n):
        for j in range(n):
            out[i, j] = np.linalg.norm(left[i] @ projectors.bases[j])
    return out


def block_autonomy_defect(rho, H0, a, kappa: float, projectors: ProjectorSet) -> float:
    """max_{M,N} || P_M L(rho) P_N - L(P_M rho P_N) ||."""
    r = np.asarray(rho.rho if isinstance(rho, DensityMatrix) else rho)
    full = lindblad_rhs(r, H0, a, kappa)
    mats = projectors.matrices()
    worst = 0.0
    for pm in mats:
        for pn in mats:
            lhs = pm @ full @ pn
            rhs = lindblad_rhs(pm @ r @ pn, H0, a, kappa)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def trace_distance(rho, sigma) -> float:
    d = np.asarray(rho) - np.asarray(sigma)
    return 0.5 * float(np.abs(la.eigvalsh((d + d.conj().T) / 2)).sum())


def ensemble_density(trajectories: list[Trajectory], snapshot: int) -> np.ndarray:
    """Mean of |psi><psi| over trajectories at one snapshot index."""
    psis = np.array([tr.states[snapshot] for tr in trajectories])
    return psis.T @ psis.conj() / len(trajectories)
