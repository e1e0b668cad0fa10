"""Measurement eigenspaces, conserved-pair eigenspaces and the emergent
measurement-projection subspaces built from them.

Projectors are stored as orthonormal column bases; ``ProjectorSet.matrix(i)``
materialises ``Q Q^dag`` when a full matrix is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
import scipy.linalg as la

from .fock import FockBasis, MatrixOperator, conserved_observable, ka, rbz

MEASUREMENT = "measurement"
CONSERVED = "conserved"
EMERGENT = "emergent"

SCHEMA_VERSION = 1


class IncompleteProjectorSet(ValueError):
    pass


class CommutatorCheckFailed(RuntimeError):
    pass


def _dense(op) -> np.ndarray:
    if isinstance(op, MatrixOperator):
        return op.toarray()
    if hasattr(op, "toarray"):
        return op.toarray()
    return np.asarray(op)


@dataclass
class ProjectorSet:
    """Mutually orthogonal projectors given by orthonormal column bases."""

    bases: list[np.ndarray]
    labels: list[dict]
    kind: str
    _dim: int = field(default=-1, repr=False)

    def __post_init__(self):
        if len(self.bases) != len(self.labels):
            raise ValueError("one label per projector required")
        if self.bases:
            self._dim = self.bases[0].shape[0]

    def __len__(self):
        return len(self.bases)

    @property
    def hilbert_dim(self) -> int:
        return self._dim

    @property
    def dims(self) -> list[int]:
        return [q.shape[1] for q in self.bases]

    def matrix(self, i: int) -> np.ndarray:
        q = self.bases[i]
        return q @ q.conj().T

    def matrices(self) -> list[np.ndarray]:
        return [self.matrix(i) for i in range(len(self))]

    def defects(self) -> dict[str, float]:
        """Worst orthogonality, completeness and idempotency violations."""
        mats = self.matrices()
        ortho = 0.0
        for i in range(len(self)):
            for j in range(i + 1, len(self)):
                ortho = max(ortho, float(np.abs(self.bases[i].conj().T @ self.bases[j]).max(initial=0.0)))
        total = sum(mats) if mats else np.zeros((0, 0))
        complete = float(np.abs(total - np.eye(total.shape[0])).max(initial=0.0))
        idem = max((float(np.abs(p @ p - p).max()) for p in mats), default=0.0)
        return {"orthogonality": ortho, "completeness": complete, "idempotency": idem}

    def validate(self, tol: float = 1e-10):
        d = self.defects()
        if d["completeness"] > tol:
            raise IncompleteProjectorSet(f"projectors do not sum to identity (defect {d['completeness']:.2e})")
        if d["orthogonality"] > tol or d["idempotency"] > tol:
            raise ValueError(f"projector set invalid: {d}")

    def populations(self, psi: np.ndarray) -> np.ndarray:
        return np.array([np.vdot(c, c).real for c in (q.conj().T @ psi for q in self.bases)])

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "hilbert_dim": self.hilbert_dim,
            "projectors": [
                {"index": i, "dimension": d, **_jsonable(lab)}
                for i, (d, lab) in enumerate(zip(self.dims, self.labels))
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def cluster_eigenvalues(values: np.ndarray, tol: float = 1e-8, scale: float | None = None) -> list[np.ndarray]:
    """Group sorted eigenvalues wherever consecutive gaps fall below tol * scale.

    ``scale`` defaults to the larger of the spectral range and the largest
    magnitude (1 for an all-zero spectrum).

    Gap detection on the sorted spectrum (rather than binning) keeps
    irrational coincidences such as sqrt(2) from distinct sectors together.
    """
    order = np.argsort(values)
    v = values[order]
    if v.size == 0:
        return []
    if scale is None:
        scale = max(v[-1] - v[0], np.abs(v).max())
        if scale < 1e-300:
            scale = 1.0
    breaks = np.nonzero(np.diff(v) > tol * scale)[0] + 1
    return np.split(order, breaks)


def _scale(a: np.ndarray) -> float:
    """Row-sum norm (an upper bound on the spectral radius), 1 for a zero matrix."""
    r = float(np.abs(a).sum(axis=1).max(initial=0.0))
    return r if r > 0 else 1.0


def eigenspace_projectors(A, degeneracy_tol: float = 1e-8, hermitian_tol: float = 1e-10) -> ProjectorSet:
    """Projectors P_m onto the eigenspaces of a Hermitian operator."""
    a = _dense(A)
    if np.abs(a - a.conj().T).max(initial=0.0) > hermitian_tol * max(1.0, np.abs(a).max(initial=0.0)):
        raise ValueError("eigenspace_projectors needs a Hermitian operator")
    w, v = la.eigh(a)
    bases, labels = [], []
    for idx in cluster_eigenvalues(w, degeneracy_tol, _scale(a)):
        idx = np.sort(idx)
        bases.append(v[:, idx])
        labels.append({"eigenvalue": float(w[idx].mean()), "multiplicity": int(idx.size)})
    return ProjectorSet(bases, labels, MEASUREMENT)


def default_weights(n: int) -> np.ndarray:
    """Square roots of distinct primes: rationally independent, so integer
    occupation tuples never share a weighted sum."""
    primes = []
    c = 2
    while len(primes) < n:
        if all(c % p for p in primes):
            primes.append(c)
        c += 1
    return np.sqrt(np.array(primes, dtype=float))


def conserved_eigenspaces(basis: FockBasis, weights=None, degeneracy_tol: float = 1e-8) -> ProjectorSet:
    """Joint eigenspaces R_m of the pair occupations O_k, k in the reduced zone.

    Labels carry the occupation tuple (O_k for k = 2pi/M, ..., pi) and the
    ordering is descending lexicographic in that tuple.
    """
    js = rbz(basis.n_sites)
    ops = [conserved_observable(basis, j) for j in js]
    g = default_weights(len(js)) if weights is None else np.asarray(weights, dtype=float)
    if g.size != len(js):
        raise ValueError(f"need {len(js)} weights, got {g.size}")
    O = sum(gk * op.toarray() for gk, op in zip(g, ops))
    w, v = la.eigh(O)
    found = []
    for idx in cluster_eigenvalues(w, degeneracy_tol):
        q = v[:, np.sort(idx)]
        occ = []
        for op in ops:
            vals = np.real(np.einsum("ij,ij->j", q.conj(), op.matrix @ q))
            if np.ptp(vals) > 1e-6 or abs(vals[0] - round(vals[0])) > 1e-6:
                raise RuntimeError("weights do not resolve the joint O_k spectrum")
            occ.append(int(round(vals[0])))
        found.append((tuple(occ), q))
    found.sort(key=lambda t: t[0], reverse=True)
    labels = [
        {"occupations": list(occ), "k_labels": [int(j) for j in js], "name": f"R{i}"}
        for i, (occ, _) in enumerate(found)
    ]
    return ProjectorSet([q for _, q in found], labels, CONSERVED)


def restricted_spectrum(op, q: np.ndarray, scale: float = 1.0, tol: float = 1e-8) -> list[float]:
    """Distinct eigenvalues of ``op`` compressed to the column space of q."""
    full = _dense(op)
    a = q.conj().T @ (full @ q)
    w = la.eigvalsh((a + a.conj().T) / 2) / scale
    ref = _scale(full) / abs(scale)
    return [float(w[idx].mean()) for idx in cluster_eigenvalues(w, tol, ref)] if w.size else []


def _random_unitary(n: int, rng) -> np.ndarray:
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def adapted_eigenvectors(
    H,
    refine: ProjectorSet | None = None,
    degeneracy_tol: float = 1e-8,
    seed: int = 12345,
):
    """Complete eigenbasis of H with a controlled choice inside degenerate eigenspaces.

    Without ``refine`` every degenerate eigenspace gets a fixed pseudo-random
    rotation, i.e. generic eigenvectors.  With ``refine`` (projectors that
    commute with H, such as conserved-quantity eigenspaces) each degenerate
    eigenspace is first split along those projectors and only the remaining
    degeneracy is rotated generically.
    """
    h = _dense(H)
    w, v = la.eigh(h)
    rng = np.random.default_rng(seed)
    ref = _scale(h)
    generic = None
    if refine is not None:
        x = rng.uniform(0.5, 1.5, len(refine))
        generic = sum(xm * refine.matrix(i) for i, xm in enumerate(x))
    energies, vecs = [], []
    for idx in cluster_eigenvalues(w, degeneracy_tol, ref):
        q = v[:, np.sort(idx)]
        if q.shape[1] > 1:
            if generic is not None:
                c = q.conj().T @ generic @ q
                cw, u = la.eigh((c + c.conj().T) / 2)
                blocks = [u[:, np.sort(b)] for b in cluster_eigenvalues(cw, degeneracy_tol)]
            else:
                blocks = [np.eye(q.shape[1])]
            q = np.concatenate([q @ (b @ _random_unitary(b.shape[1], rng)) for b in blocks], axis=1)
        vecs.append(q)
        energies.append(np.full(q.shape[1], w[idx].mean()))
    return np.concatenate(energies), np.concatenate(vecs, axis=1)


def find_emergent_subspaces(
    measurement: ProjectorSet,
    hamiltonian=None,
    overlap_tol: float = 1e-10,
    degeneracy_tol: float = 1e-8,
    h_eigvecs: np.ndarray | None = None,
    refine: ProjectorSet | None = None,
    check_tol: float = 1e-8,
    seed: int = 12345,
) -> ProjectorSet:
    """Connected components of the bipartite overlap graph {P_m} - {|h_i>}.

    An edge joins P_m and |h_i> when ``||P_m h_i||^2 > overlap_tol``; each
    component gives one emergent projector, the sum of its P_m.

    When H is degenerate the components depend on which eigenvectors are
    used.  Pass ``h_eigvecs`` directly, or let them be computed from
    ``hamiltonian`` via :func:`adapted_eigenvectors` with ``refine``:

    * ``refine=None``: generic eigenvectors (coarsest outcome);
    * ``refine=<conserved set>``: eigenvectors inside each conserved sector,
      e.g. momentum Fock states for the pair occupations;
    * ``refine=measurement``: the finest partition commuting with H.

    The Hamiltonian, when given, is used for the commutator check.
    """
    if h_eigvecs is None:
        if hamiltonian is None:
            raise ValueError("need a Hamiltonian or its eigenvectors")
        _, h_eigvecs = adapted_eigenvectors(hamiltonian, refine, degeneracy_tol, seed)
    g = nx.Graph()
    n_p = len(measurement)
    g.add_nodes_from(("P", m) for m in range(n_p))
    g.add_nodes_from(("h", i) for i in range(h_eigvecs.shape[1]))
    for m, q in enumerate(measurement.bases):
        weight = np.sum(np.abs(q.conj().T @ h_eigvecs) ** 2, axis=0)
        for i in np.nonzero(weight > overlap_tol)[0]:
            g.add_edge(("P", m), ("h", int(i)))
    comps = []
    for comp in nx.connected_components(g):
        members = sorted(m for kind, m in comp if kind == "P")
        if members:
            comps.append(members)
    comps.sort(key=lambda c: c[0])
    bases = [_merge(measurement.bases, c) for c in comps]
    labels = [
        {"members": c, "member_eigenvalues": [measurement.labels[m].get("eigenvalue") for m in c]}
        for c in comps
    ]
    result = ProjectorSet(bases, labels, EMERGENT)
    if hamiltonian is not None:
        h = _dense(hamiltonian)
        scale = max(1.0, np.abs(h).max(initial=0.0))
        for i in range(len(result)):
            p = result.matrix(i)
            if np.abs(p @ h - h @ p).max(initial=0.0) > check_tol * scale:
                raise CommutatorCheckFailed(
                    f"emergent projector {i} does not commute with the Hamiltonian; "
                    "check overlap_tol / degeneracy_tol"
                )
    return result


def _merge(bases: list[np.ndarray], members) -> np.ndarray:
    return np.concatenate([bases[i] for i in members], axis=1)


def sin_classes(n_sites: int) -> list[tuple[int, ...]]:
    """Reduced-zone labels grouped by equal |sin(ka)|, excluding k = pi/a."""
    half = n_sites // 2
    classes = []
    for j in range(1, half):
        pair = tuple(sorted({j, half - j}))
        if pair not in classes:
            classes.append(pair)
    return classes


def parity_signature(occupations, n_sites: int) -> tuple[int, ...]:
    """Parity of the summed pair occupation in each sin-degenerate class."""
    occ = dict(zip(range(1, n_sites // 2 + 1), occupations))
    return tuple(sum(occ[j] for j in cls) % 2 for cls in sin_classes(n_sites))


def parity_subspaces(basis: FockBasis, conserved: ProjectorSet | None = None) -> ProjectorSet:
    """Emergent subspaces of the alternating bond measurement from parity rules.

    R_m spaces are merged when the pair occupations summed over each class
    {k, pi/a - k} have the same parities; k = pi/a is ignored because the
    measurement cannot see it.
    """
    M = basis.n_sites
    if M % 2:
        raise ValueError("parity construction needs an even number of sites")
    if conserved is None:
        conserved = conserved_eigenspaces(basis)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, lab in enumerate(conserved.labels):
        groups.setdefault(parity_signature(lab["occupations"], M), []).append(i)
    classes = sin_classes(M)
    out_bases, out_labels = [], []
    for sig in sorted(groups):
        members = groups[sig]
        out_bases.append(_merge(conserved.bases, members))
        out_labels.append(
            {
                "parities": ["odd" if b else "even" for b in sig],
                "classes_ka_over_pi": [[float(ka(j, M) / np.pi) for j in c] for c in classes],
                "members": members,
                "member_names": [conserved.labels[m]["name"] for m in members],
            }
        )
    return ProjectorSet(out_bases, out_labels, EMERGENT)


def containing_subspace(q: np.ndarray, emergent: ProjectorSet, tol: float = 1e-10) -> int:
    """Index of the single emergent projector that contains span(q)."""
    weights = np.array([np.linalg.norm(e.conj().T @ q) ** 2 for e in emergent.bases]) / q.shape[1]
    hits = np.nonzero(np.abs(weights - 1) < tol)[0]
    if hits.size != 1 or np.any(np.abs(np.delete(weights, hits)) > tol):
        raise ValueError(f"subspace is not contained in exactly one projector (weights {weights})")
    return int(hits[0])


def membership(parts: ProjectorSet, emergent: ProjectorSet, tol: float = 1e-10) -> list[list[int]]:
    """For each emergent projector, the indices of ``parts`` lying inside it."""
    out = [[] for _ in range(len(emergent))]
    for i, q in enumerate(parts.bases):
        out[containing_subspace(q, emergent, tol)].append(i)
    return out


def same_projectors(a: ProjectorSet, b: ProjectorSet) -> float:
    """Max entry difference after matching projectors one-to-one; inf if the
    sets cannot be matched."""
    if len(a) != len(b):
        return float("inf")
    mb = b.matrices()
    used, worst = set(), 0.0
    for pa in a.matrices():
        diffs = [np.abs(pa - pb).max() if j not in used else np.inf for j, pb in enumerate(mb)]
        j = int(np.argmin(diffs))
        used.add(j)
        worst = max(worst, float(diffs[j]))
    return worst
