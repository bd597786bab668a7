import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bilinspa import (compute_gramians, generate_test_system, observability_gramian,
                      reachability_gramian_new, riccati_solvable, solve_generalized_lyapunov)
from bilinspa.exceptions import (ConvergenceError, DimensionCapError, InstabilityError,
                                 PreconditionError)
from bilinspa.gramians import (is_positive_definite, lyapunov_operator, psd_closure_check,
                               riccati_residual)
from conftest import scalar_system, solvable


def test_scalar_gramians_closed_form():
    g = compute_gramians(scalar_system())
    assert g.Q[0, 0] == pytest.approx(1 / 1.66, abs=1e-12)
    assert g.X[0, 0] == pytest.approx(1.66, abs=1e-12)
    assert g.P[0, 0] == pytest.approx(1 / 1.66, abs=1e-12)
    assert g.Q_positive_definite


def test_linear_case_reduces_to_lyapunov():
    # N = H = 0: X^{-1} is the ordinary reachability Gramian
    rng = np.random.default_rng(4)
    A = rng.normal(size=(4, 4)) - 4 * np.eye(4)
    B = rng.normal(size=(4, 2))
    s = scalar_system().replace(A=A, B=B, C=np.ones((1, 4)), N=[np.zeros((4, 4))] * 2,
                                H=[], K=np.zeros((0, 0)))
    P_ref = sla.solve_continuous_lyapunov(A, -B @ B.T)
    res = reachability_gramian_new(s)
    np.testing.assert_allclose(res.P, P_ref, rtol=1e-10, atol=1e-12)
    assert res.iterations <= 1


def test_observability_matches_entrywise_oracle(small_suite):
    for s in small_suite:
        Q, pd = observability_gramian(s)
        assert pd
        np.testing.assert_allclose(Q, oracles.observability_oracle(s), rtol=1e-10,
                                   atol=1e-13)


def test_lyapunov_operator_of_solution():
    s = generate_test_system(5, 2, 1, 2, 21)
    rhs = np.eye(5)
    X = solve_generalized_lyapunov(s.A, s.N, s.H, s.K, rhs)
    np.testing.assert_allclose(lyapunov_operator(s.A, s.N, s.H, s.K, X), -rhs, atol=1e-11)
    np.testing.assert_array_equal(X, X.T)


def test_unstable_system_refused():
    s = scalar_system(a=0.5)
    with pytest.raises(InstabilityError):
        solve_generalized_lyapunov(s.A, s.N, s.H, s.K, np.eye(1))
    with pytest.raises(InstabilityError):
        compute_gramians(s)


def test_dimension_cap():
    s = generate_test_system(6, 1, 1, 1, 1)
    with pytest.raises(DimensionCapError, match="solver cap"):
        compute_gramians(s, max_dim=5)


def test_zero_input_matrix_rejected():
    s = scalar_system(b=0.0)
    with pytest.raises(PreconditionError):
        reachability_gramian_new(s)


def test_newton_reports_best_iterate():
    s = generate_test_system(6, 2, 2, 2, 2)
    assert not riccati_solvable(s)
    with pytest.raises(ConvergenceError) as info:
        reachability_gramian_new(s, max_iters=3)
    err = info.value
    assert err.best.shape == (6, 6)
    assert err.residual > 0 and err.iterations <= 3


def test_residual_trace_decreases(small_suite):
    for s in small_suite:
        g = compute_gramians(s)
        trace = np.array(g.residual_trace)
        assert np.all(np.diff(trace) < 0)
        assert is_positive_definite(g.P) and is_positive_definite(g.Q)
        np.testing.assert_allclose(g.P @ g.X, np.eye(s.n), atol=1e-8)


def test_root_is_below_linear_seed(small_suite):
    # Newton from above: X <= X0 = P0^{-1}
    for s in small_suite:
        X0 = np.linalg.inv(sla.solve_continuous_lyapunov(s.A, -s.B @ s.B.T))
        X = compute_gramians(s).X
        assert np.linalg.eigvalsh(X0 - X).min() > -1e-9 * np.linalg.norm(X0)


def test_gramians_are_similarity_covariant():
    s = generate_test_system(4, 2, 2, 1, 8, accept=solvable)
    rng = np.random.default_rng(0)
    T = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    Ti = np.linalg.inv(T)
    g, gt = compute_gramians(s), compute_gramians(s.transformed(T, Ti))
    np.testing.assert_allclose(gt.P, T @ g.P @ T.T, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(gt.Q, Ti.T @ g.Q @ Ti, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(np.linalg.eigvals(gt.P @ gt.Q).real.max(),
                               np.linalg.eigvals(g.P @ g.Q).real.max(), rtol=1e-8)


def test_riccati_residual_direct():
    s = scalar_system()
    assert riccati_residual(s, np.array([[1.66]]))[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert riccati_residual(s, np.array([[1.0]]))[0, 0] == pytest.approx(-0.66)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_psd_closure_nonnegative(v, rows, d, seed):
    rng = np.random.default_rng(seed)
    A_list = [rng.normal(size=(rows, d)) for _ in range(v)]
    W = rng.normal(size=(v, v))
    assert psd_closure_check(A_list, W @ W.T) >= -1e-10


def test_psd_closure_detects_indefinite_k():
    A_list = [np.eye(2), np.eye(2)]
    assert psd_closure_check(A_list, np.array([[0.0, 1.0], [1.0, 0.0]])) > -1e-15
    assert psd_closure_check([np.eye(2), -np.eye(2)],
                             np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(-2.0)
