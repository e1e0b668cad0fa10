import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from backaction import fock, light
from backaction import subspace as ss


def fig_system(n, m):
    b = fock.build_basis(n, m)
    return b, fock.build_hamiltonian(b, fock.LatticeSpec()), light.b2_operator(b)


def test_cluster_eigenvalues():
    v = np.array([1.0, np.sqrt(2), 1.0 + 1e-13, -3.0, np.sqrt(2) - 1e-14])
    groups = sorted(sorted(g.tolist()) for g in ss.cluster_eigenvalues(v))
    assert groups == [[0, 2], [1, 4], [3]]
    assert len(ss.cluster_eigenvalues(np.array([1e-17, -1e-17, 0.0]), scale=1.0)) == 1


@given(st.integers(0, 2**32 - 1))
def test_eigenspace_projectors_valid(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-2, 3, size=(6, 6)).astype(float)
    a = x + x.T
    ps = ss.eigenspace_projectors(a)
    ps.validate()
    recon = sum(lab["eigenvalue"] * ps.matrix(i) for i, lab in enumerate(ps.labels))
    np.testing.assert_allclose(recon, a, atol=1e-10)


def test_eigenspace_projectors_need_hermitian():
    with pytest.raises(ValueError):
        ss.eigenspace_projectors(np.array([[0, 1], [0, 0]]))


def test_populations_match_projection_norms():
    b, H, B2 = fig_system(2, 6)
    ps = ss.eigenspace_projectors(B2)
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(b.dim) + 1j * rng.standard_normal(b.dim)
    psi /= np.linalg.norm(psi)
    ref = [np.linalg.norm(ps.matrix(i) @ psi) ** 2 for i in range(len(ps))]
    np.testing.assert_allclose(ps.populations(psi), ref, atol=1e-12)
    assert abs(ps.populations(psi).sum() - 1) < 1e-10


def test_incomplete_set_detected():
    b, H, B2 = fig_system(2, 4)
    ps = ss.eigenspace_projectors(B2)
    partial = ss.ProjectorSet(ps.bases[:-1], ps.labels[:-1], ps.kind)
    with pytest.raises(ss.IncompleteProjectorSet):
        partial.validate()


def test_conserved_eigenspaces_table():
    b, H, B2 = fig_system(2, 8)
    R = ss.conserved_eigenspaces(b)
    R.validate()
    assert [tuple(l["occupations"]) for l in R.labels] == [
        (2, 0, 0, 0), (1, 1, 0, 0), (1, 0, 1, 0), (1, 0, 0, 1), (0, 2, 0, 0),
        (0, 1, 1, 0), (0, 1, 0, 1), (0, 0, 2, 0), (0, 0, 1, 1), (0, 0, 0, 2),
    ]
    # dimension of R with occupations (O_k) is prod_k (O_k + 1)
    assert R.dims == [int(np.prod(np.array(l["occupations"]) + 1)) for l in R.labels]


def test_golden_ratio_weights_collide():
    # phi^2 = phi + 1 makes (0,0,1,...) and (1,1,0,...) indistinguishable
    b, H, B2 = fig_system(2, 8)
    phi = (1 + np.sqrt(5)) / 2
    with pytest.raises(RuntimeError):
        ss.conserved_eigenspaces(b, weights=phi ** np.arange(4))


def test_random_pair_gives_trivial_component():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    y = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    A, H = x + x.conj().T, y + y.conj().T
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(A), H)
    assert len(em) == 1 and em.dims == [12]


def test_commuting_pair_gives_eigenspaces():
    b = fock.build_basis(2, 4)
    H = fock.build_hamiltonian(b, fock.LatticeSpec())
    B1 = light.b1_operator(b)
    P = ss.eigenspace_projectors(B1)
    em = ss.find_emergent_subspaces(P, H, refine=P)
    assert len(em) == len(P)


def test_emergent_four_subspaces_n2_m8():
    b, H, B2 = fig_system(2, 8)
    R = ss.conserved_eigenspaces(b)
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(B2), H, refine=R)
    groups = sorted(sorted(g) for g in ss.membership(R, em))
    assert groups == [[0, 2, 4, 7, 9], [1, 5], [3, 8], [6]]
    assert ss.same_projectors(em, ss.parity_subspaces(b, R)) < 1e-10


def test_finest_partition_is_block_diagonal_oracle():
    # Splitting degenerate H0 levels along the measurement eigenspaces gives
    # the finest decomposition; check against P H P block structure directly.
    b, H, B2 = fig_system(2, 8)
    P = ss.eigenspace_projectors(B2)
    fine = ss.find_emergent_subspaces(P, H, refine=P)
    Hd = H.toarray()
    for q in fine.bases:
        pq = q @ q.conj().T
        assert np.abs(pq @ Hd - Hd @ pq).max() < 1e-10
        assert np.abs(pq @ B2.toarray() - B2.toarray() @ pq).max() < 1e-10
    assert len(fine) == 8
    coarse = ss.find_emergent_subspaces(P, H, refine=ss.conserved_eigenspaces(b))
    # every finest component lies in one of the coarse ones
    ss.membership(fine, coarse)


@pytest.mark.parametrize("m", [4, 6, 8, 10])
def test_single_atom_parity_rule(m):
    b, H, B2 = fig_system(1, m)
    R = ss.conserved_eigenspaces(b)
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(B2), H, refine=R)
    par = ss.parity_subspaces(b, R)
    assert ss.same_projectors(em, par) < 1e-10
    # the atom sits in one sin class (that class odd) or at k = pi/a (all even)
    assert len(em) == len(ss.sin_classes(m)) + 1


def test_parity_rule_n4_m8():
    b, H, B2 = fig_system(4, 8)
    R = ss.conserved_eigenspaces(b)
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(B2), H, refine=R)
    assert ss.same_projectors(em, ss.parity_subspaces(b, R)) < 1e-10
    em.validate()


def test_emergent_commute_with_both():
    b, H, B2 = fig_system(3, 6)
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(B2), H, refine=ss.conserved_eigenspaces(b))
    for i in range(len(em)):
        p = em.matrix(i)
        assert np.abs(p @ H.toarray() - H.toarray() @ p).max() < 1e-8
        assert np.abs(p @ B2.toarray() - B2.toarray() @ p).max() < 1e-8


def test_bad_eigenvectors_fail_commutator_check():
    # Fock states are not H0 eigenvectors and a loose overlap threshold drops
    # edges, so the components cannot be invariant
    b, H, B2 = fig_system(2, 6)
    P = ss.eigenspace_projectors(B2)
    with pytest.raises(ss.CommutatorCheckFailed):
        ss.find_emergent_subspaces(P, H, h_eigvecs=np.eye(b.dim), overlap_tol=0.3)


def test_empty_lattice_single_projector():
    b = fock.build_basis(0, 8)
    R = ss.conserved_eigenspaces(b)
    assert len(R) == 1
    em = ss.find_emergent_subspaces(ss.eigenspace_projectors(light.b2_operator(b)),
                                    fock.build_hamiltonian(b, fock.LatticeSpec()))
    assert len(em) == 1 and em.dims == [1]


def test_projector_json_roundtrip_fields():
    b, H, B2 = fig_system(2, 8)
    js = ss.conserved_eigenspaces(b).to_json()
    assert js["schema_version"] == ss.SCHEMA_VERSION
    assert js["projectors"][0]["occupations"] == [2, 0, 0, 0]
    assert sum(p["dimension"] for p in js["projectors"]) == b.dim
