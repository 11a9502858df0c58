import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nsamg.exceptions import SingularCoarseOperator, SingularRow
from nsamg.linalg import polar_q, svd
from nsamg.problems import ProblemSpec, gen_upwind_advection, prepare
from nsamg.theory import measure_projection
from nsamg.transfer import (CfSplit, TransferPair, cf_split, classical_interp, coarse_operator,
                            counterexample_pair, laip_interp, lair_neighbourhoods, lair_restrict,
                            q_pair_restrict, strength_graph, svd_transfer)

from conftest import builders, random_unit_system, system


def tridiag(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_strength_graph_cases():
    S = strength_graph(tridiag(5)).toarray()
    np.testing.assert_array_equal(S, (tridiag(5).toarray() < 0))
    assert strength_graph(sp.diags([1.0, 2.0, 3.0])).nnz == 0
    A = gen_upwind_advection(ProblemSpec(n=4))
    S = strength_graph(A)
    th = 3 * math.pi / 16
    assert math.sin(th) / math.cos(th) > 0.25
    # interior cell 5 = (1, 1): west 4 and south 1 both strong
    assert set(S[5].indices) == {1, 4}


def test_strength_positive_entries_weak():
    A = np.array([[2.0, 1.0, -1.0], [-1.0, 2.0, 0.0], [0.0, -1.0, 2.0]])
    S = strength_graph(A).toarray()
    assert not S[0, 1] and S[0, 2]


def test_cf_split_empty_graph_all_coarse():
    cf = cf_split(sp.csr_matrix((4, 4), dtype=bool))
    assert cf.n_c == 4


def test_cf_split_chain_by_hand():
    # measures (1,2,2,2,1): point 1 is picked first, making 0 and 2 F; the bump
    # on 3 makes it the next C, and 4 becomes F
    cf = cf_split(strength_graph(tridiag(5)))
    assert "".join(cf.labels()) == "FCFCF"
    np.testing.assert_array_equal(cf.c_points, [1, 3])
    assert cf.coarse_index[1] == 0 and cf.coarse_index[3] == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(6, 40), st.floats(0.05, 0.6), st.integers(0, 10_000))
def test_every_f_point_has_strong_c_neighbour(n, density, seed):
    r = np.random.default_rng(seed)
    M = -np.where(r.random((n, n)) < density, r.random((n, n)), 0.0)
    np.fill_diagonal(M, 1.0)
    S = strength_graph(M)
    cf = cf_split(S)
    for i in cf.f_points:
        assert cf.is_coarse[S[i].indices].any()


@pytest.mark.parametrize("disc", ["upwind_fv", "supg"])
def test_coarsening_ratio_upwind(disc):
    P, R, cf = builders(disc, 8)
    ratio = cf.n_c / cf.n
    if disc == "upwind_fv":
        assert ratio <= 0.6
    assert 0 < ratio < 1


def test_classical_interp_all_coarse_is_identity():
    A = tridiag(4)
    cf = CfSplit.from_mask(np.ones(4, dtype=bool))
    np.testing.assert_array_equal(classical_interp(A, strength_graph(A), cf).toarray(), np.eye(4))


def test_classical_interp_poisson_weights():
    A = tridiag(5)
    S = strength_graph(A)
    cf = cf_split(S)
    P = classical_interp(A, S, cf).toarray()
    np.testing.assert_allclose(P[2], [0.5, 0.5])
    np.testing.assert_allclose(P[0], [0.5, 0.0])  # boundary row: a_00 = 2 keeps Dirichlet weight
    np.testing.assert_allclose(P[[1, 3]], np.eye(2))


def _classical_oracle(A, S, cf):
    """Direct transcription of the weight formula, loop by loop."""
    A = A.toarray()
    S = S.toarray()
    n = A.shape[0]
    P = np.zeros((n, cf.n_c))
    for i in range(n):
        if cf.is_coarse[i]:
            P[i, cf.coarse_index[i]] = 1.0
            continue
        Ci = [j for j in range(n) if S[i, j] and cf.is_coarse[j]]
        Fs = [k for k in range(n) if S[i, k] and not cf.is_coarse[k] and k != i]
        weak = [m for m in range(n) if m != i and A[i, m] != 0 and not S[i, m]]
        denom = A[i, i] + sum(A[i, m] for m in weak)
        num = {j: A[i, j] for j in Ci}
        for k in Fs:
            tot = sum(A[k, m] for m in Ci)
            if tot != 0:
                for j in Ci:
                    num[j] += A[i, k] * A[k, j] / tot
            else:
                denom += A[i, k]
        for j in Ci:
            P[i, cf.coarse_index[j]] = -num[j] / denom
    return P


@pytest.mark.parametrize("disc,n", [("upwind_fv", 4), ("upwind_fv", 6), ("supg", 5)])
def test_classical_interp_matches_loop_oracle(disc, n):
    A = system(disc, n).A
    S = strength_graph(A)
    cf = cf_split(S)
    np.testing.assert_allclose(classical_interp(A, S, cf).toarray(), _classical_oracle(A, S, cf), atol=1e-13)


def test_classical_interp_preserves_constants_in_interior():
    n = 4
    A = gen_upwind_advection(ProblemSpec(n=n))
    S = strength_graph(A)
    cf = cf_split(S)
    P = classical_interp(A, S, cf).toarray()
    idx = np.arange(n * n)
    for i in cf.f_points:
        nb = [k for k in A[i].indices if k != i]
        full_interior = idx[i] % n > 0 and idx[i] // n > 0
        if full_interior and all(k % n > 0 and k // n > 0 for k in nb):
            assert P[i].sum() == pytest.approx(1.0, abs=1e-12)


def test_classical_interp_singular_row():
    A = sp.csr_matrix(np.array([[0.0, -1.0], [0.0, 1.0]]))
    S = strength_graph(A)
    cf = CfSplit.from_mask(np.array([False, True]))
    with pytest.raises(SingularRow):
        classical_interp(A, S, cf)


def test_lair_all_coarse_identity_and_scalar():
    A = tridiag(3)
    cf = CfSplit.from_mask(np.ones(3, dtype=bool))
    np.testing.assert_array_equal(lair_restrict(A, strength_graph(A), cf).toarray(), np.eye(3))
    A2 = sp.csr_matrix(np.array([[3.0, -1.0], [-2.0, 5.0]]))
    cf2 = CfSplit.from_mask(np.array([True, False]))
    R = lair_restrict(A2, strength_graph(A2), cf2).toarray()
    assert R[1, 0] == pytest.approx(1.0 / 5.0)  # r = -a_cf / a_ff
    assert (R.T @ A2.toarray())[0, 1] == pytest.approx(0.0, abs=1e-15)
    P = laip_interp(A2, None, cf2).toarray()
    assert P[1, 0] == pytest.approx(2.0 / 5.0)  # p_fc = -a_fc / a_ff


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("disc", ["upwind_fv", "supg"])
def test_lair_zeroes_neighbourhood(disc, degree):
    A = system(disc, 6).A
    S = strength_graph(A)
    cf = cf_split(S)
    R = lair_restrict(A, S, cf, degree).toarray()
    RA = R.T @ A.toarray()
    np.testing.assert_array_equal(R[cf.c_points], np.eye(cf.n_c))
    for c, N in lair_neighbourhoods(S, cf, degree).items():
        if N.size:
            assert np.abs(RA[cf.coarse_index[c], N]).max() <= 1e-12


def test_laip_equals_lair_for_symmetric():
    A = tridiag(9)
    S = strength_graph(A)
    cf = cf_split(S)
    np.testing.assert_allclose(laip_interp(A, S, cf).toarray(), lair_restrict(A, S, cf).toarray())


def test_svd_transfer_cases():
    A = np.diag([3.0, 1.0, 2.0, 5.0])
    F = svd(A)
    P = svd_transfer(F, 2, "right")
    np.testing.assert_allclose(np.abs(P), np.eye(4)[:, [1, 2]])
    np.testing.assert_allclose(np.abs(svd_transfer(F, 4, "left")), np.abs(F.U))
    G = svd(random_unit_system(10, 1))
    P, R = svd_transfer(G, 4, "right"), svd_transfer(G, 4, "left")
    np.testing.assert_allclose(R.T @ G.reconstruct() @ P, np.diag(G.sigma[:4]), atol=1e-12)


def test_q_pair_restrict():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((6, 2))
    np.testing.assert_array_equal(q_pair_restrict(P, np.eye(6)), P)
    M = rng.standard_normal((6, 6))
    F = svd(M @ M.T + np.eye(6))
    np.testing.assert_allclose(q_pair_restrict(P, polar_q(F)), P, atol=1e-10)
    G = svd(random_unit_system(6, 2))
    R = q_pair_restrict(P, polar_q(G))
    assert measure_projection(P, R, G, "QA").operator_norm == pytest.approx(1.0, abs=1e-8)


def test_counterexample_pair_diag():
    F = svd(np.diag([0.25, 0.5, 0.75, 1.0]))
    pair = counterexample_pair(F, 2, 1)
    Ac = pair.R.T @ F.reconstruct() @ pair.P
    np.testing.assert_allclose(Ac @ np.eye(2)[:, 1], 0.0, atol=1e-15)
    assert svd(Ac).sigma[0] <= 1e-12
    with pytest.raises(SingularCoarseOperator):
        coarse_operator(pair.R, F.reconstruct(), pair.P)


def test_coarse_operator_cases():
    A = random_unit_system(5, 3)
    np.testing.assert_allclose(coarse_operator(np.eye(5), A, np.eye(5)), A)
    F = svd(A)
    Ac = coarse_operator(svd_transfer(F, 3, "left"), A, svd_transfer(F, 3, "right"))
    np.testing.assert_allclose(Ac, np.diag(F.sigma[:3]), atol=1e-12)
    with pytest.raises(SingularCoarseOperator) as info:
        coarse_operator(np.eye(5)[:, :2], A, np.eye(5)[:, 2:4] * 0, level=3)
    assert info.value.level == 3


def test_transfer_pair_rank_check():
    P = np.ones((4, 2))
    pair = TransferPair(R=np.eye(4)[:, :2], P=P, builder_R="x", builder_P="y")
    from nsamg.exceptions import RankDeficientP
    with pytest.raises(RankDeficientP):
        pair.check_rank()


def test_svd_pair_projection_is_qa_orthogonal():
    s = system("upwind_fv", 6)
    F = s.factorization()
    P, R = svd_transfer(F, 12, "right"), svd_transfer(F, 12, "left")
    assert measure_projection(P, R, F, "QA").operator_norm == pytest.approx(1.0, abs=1e-8)


def test_classical_and_laip_coincide_on_upwind():
    # each upwind F row couples only to C points after the split, so both
    # builders reduce to p_fc = -a_fc / a_ff
    P, _, _ = builders("upwind_fv", 12)
    np.testing.assert_array_equal(P["classical"], P["laip"])


def test_classical_and_laip_differ_on_supg():
    P, _, _ = builders("supg", 8)
    assert np.abs(P["classical"] - P["laip"]).max() > 1e-3
