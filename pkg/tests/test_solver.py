import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nsamg.estimators import NSAMGSolver
from nsamg.exceptions import InvalidSpec, SingularCoarseOperator, Stagnation, TooFewIterations
from nsamg.linalg import operator_norm_weighted, svd
from nsamg.problems import ProblemSpec, generate, normalize_spectral
from nsamg.solver import (build_hierarchy, cycle, error_propagation_matrix, measure_rho,
                          mu_cycle_solve, richardson_normal_apply, two_grid_solve)
from nsamg.theory import projection_matrix
from nsamg.transfer import counterexample_pair

from conftest import random_unit_system, system


def test_richardson_zero_sweeps_is_identity():
    A = sp.csr_matrix(random_unit_system(6, 0))
    x = np.arange(6.0)
    np.testing.assert_array_equal(richardson_normal_apply(A, x, np.ones(6), 0), x)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=8), st.integers(1, 6))
def test_richardson_diagonal_factors(sig, nu):
    sig = np.array(sig) / max(sig)
    A = sp.diags(sig).tocsr()
    e = richardson_normal_apply(A, np.ones(sig.size), np.zeros(sig.size), nu)
    np.testing.assert_allclose(e, (1 - sig**2) ** nu, rtol=1e-12, atol=1e-15)


def test_richardson_qa_nonexpansive():
    M = random_unit_system(15, 3)
    F = svd(M)
    A = sp.csr_matrix(M)
    G = np.column_stack([richardson_normal_apply(A, c, np.zeros(15), 1) for c in np.eye(15)])
    assert operator_norm_weighted(G, F.qa()) <= 1 + 1e-12
    np.testing.assert_allclose(operator_norm_weighted(G, F.qa()), 1 - F.sigma[0] ** 2, rtol=1e-10)


def test_hierarchy_levels_are_unit_norm():
    h = build_hierarchy(system("upwind_fv", 16), coarsest_max=20)
    assert len(h) >= 2
    assert h.sizes == sorted(h.sizes, reverse=True)
    for lvl in h.levels:
        assert svd(lvl.A).sigma_max == pytest.approx(1.0, rel=1e-12)


def test_hierarchy_rejects_bad_choices():
    with pytest.raises(InvalidSpec):
        build_hierarchy(system("upwind_fv", 4), interp="nope")
    with pytest.raises(InvalidSpec):
        build_hierarchy(system("upwind_fv", 4), interp="svd", restrict="lair", coarsest_max=1)


def test_hierarchy_counterexample_raises_with_level():
    s = system("upwind_fv", 4)
    pair = counterexample_pair(s.factorization(), 6, 2)
    with pytest.raises(SingularCoarseOperator) as info:
        build_hierarchy(s, transfers=pair)
    assert info.value.level == 0


@pytest.mark.parametrize("interp,restrict", [("classical", "lair"), ("svd", "svd"), ("laip", "qstar")])
def test_two_grid_error_propagation_identity(interp, restrict):
    s = system("upwind_fv", 6)
    h = build_hierarchy(s, interp, restrict, max_levels=2, coarsest_max=1)
    nu = 2
    E = error_propagation_matrix(h, nu, cycle_kind="two_grid")
    F = s.factorization()
    A = F.reconstruct()
    lvl = h.levels[0]
    P = lvl.P.toarray() if sp.issparse(lvl.P) else lvl.P
    R = lvl.R.toarray() if sp.issparse(lvl.R) else lvl.R
    Pi = projection_matrix(P, R, F)
    G = np.linalg.matrix_power(np.eye(F.n) - A.T @ A, nu)
    np.testing.assert_allclose(E, (np.eye(F.n) - Pi) @ G, atol=1e-10)


def test_two_level_mu_cycle_equals_two_grid():
    s = system("upwind_fv", 8)
    h = build_hierarchy(s, max_levels=2, coarsest_max=1)
    b = np.random.default_rng(0).standard_normal(s.A.shape[0])
    r1 = two_grid_solve(h, b, nu=2, max_iters=15, tol=0)
    r2 = mu_cycle_solve(h, b, nu=2, mu=2, max_iters=15, tol=0)
    np.testing.assert_allclose(r1.residual_history, r2.residual_history, rtol=1e-12)


@pytest.mark.parametrize("interp,restrict,nu", [("classical", "lair", 4), ("svd", "svd", 1)])
def test_known_solution_recovered(interp, restrict, nu):
    s = system("upwind_fv", 12)
    h = build_hierarchy(s, interp, restrict, max_levels=3, coarsest_max=1)
    x_true = np.random.default_rng(1).standard_normal(s.A.shape[0])
    rep = mu_cycle_solve(h, s.A @ x_true, nu=nu, mu=2, tol=1e-12, max_iters=200, x_true=x_true)
    assert rep.converged
    np.testing.assert_allclose(rep.x, x_true, atol=1e-9)
    assert rep.error_history_QA[-1] < 1e-9 * rep.error_history_QA[0]


def test_no_relaxation_stagnates():
    s = system("upwind_fv", 8)
    h = build_hierarchy(s, max_levels=2, coarsest_max=1)
    b = np.random.default_rng(2).standard_normal(s.A.shape[0])
    with pytest.raises(Stagnation) as info:
        two_grid_solve(h, b, nu=0, max_iters=50)
    assert info.value.report.iterations >= 10


def test_measure_rho_synthetic():
    assert measure_rho(0.5 ** np.arange(20)[1:] / 0.5 ** np.arange(20)[:-1]) == pytest.approx(0.5)
    with pytest.raises(TooFewIterations):
        measure_rho(np.full(3, 0.5))


def test_measure_rho_agrees_with_log_slope():
    s = system("upwind_fv", 10)
    h = build_hierarchy(s, max_levels=2, coarsest_max=1)
    x_true = np.random.default_rng(3).standard_normal(s.A.shape[0])
    rep = two_grid_solve(h, s.A @ x_true, nu=2, tol=1e-13, max_iters=60, x_true=x_true)
    e = np.log(np.asarray(rep.error_history_QA)[-6:])
    slope = np.exp(np.polyfit(np.arange(e.size), e, 1)[0])
    assert measure_rho(rep) == pytest.approx(slope, rel=0.1)


def test_cycle_consistent_with_exact_solution():
    s = system("supg", 6)
    h = build_hierarchy(s, "laip", "lair", coarsest_max=10)
    x = np.random.default_rng(4).standard_normal(s.A.shape[0])
    np.testing.assert_allclose(cycle(h, x, s.A @ x, nu=1, mu=2), x, atol=1e-12)


def test_estimator_scale_bookkeeping():
    A = generate(ProblemSpec(n=10))
    x_true = np.linspace(1, 2, A.shape[0])
    est = NSAMGSolver(nu=4, tol=1e-12, max_iter=300).fit(A)
    x = est.predict(A @ x_true)
    np.testing.assert_allclose(x, x_true, rtol=1e-8)
    assert est.report_.converged
    est2 = NSAMGSolver(nu=4, diag=False, tol=1e-12, max_iter=300).fit(A)
    np.testing.assert_allclose(est2.predict(A @ x_true), x_true, rtol=1e-8)
    assert est.scale_ == pytest.approx(1.0 / svd(A.multiply(1 / A.diagonal()[:, None])).sigma_max)


def test_normalized_system_required():
    with pytest.raises(InvalidSpec):
        build_hierarchy(type("S", (), {"A": sp.eye(4).tocsr(), "normalized": False})())
    assert normalize_spectral(sp.eye(3).tocsr() * 4).scale == pytest.approx(0.25)
