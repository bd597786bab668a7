import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bilinspa import BilinearStochasticSystem, generate_test_system, is_mean_square_stable
from bilinspa.exceptions import DimensionError
from bilinspa.system import closure_operator, unvec, validate, vec
from conftest import scalar_system


def test_vec_is_column_stacking():
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(vec(X), [0, 3, 1, 4, 2, 5])
    Y = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(unvec(vec(Y), 3), Y)


def test_vec_kron_identity():
    rng = np.random.default_rng(0)
    A, X, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X), atol=1e-12)


def test_system_is_immutable():
    s = scalar_system()
    with pytest.raises(ValueError):
        s.A[0, 0] = 5.0
    assert (s.n, s.m, s.p, s.v) == (1, 1, 1, 1)


def test_validate_reports_every_violation():
    s = BilinearStochasticSystem(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)),
                                 N=[], H=[np.eye(2)], K=[[-1.0]])
    msgs = validate(s).violations
    assert any("B row count" in m for m in msgs)
    assert any("N length mismatch" in m for m in msgs)
    assert any("K not PSD" in m for m in msgs)
    assert not validate(s)


def test_validate_rejects_asymmetric_and_nonfinite():
    s = BilinearStochasticSystem(A=[[np.nan, 0], [0, -1]], B=np.ones((2, 1)),
                                 C=np.ones((1, 2)), N=[np.zeros((2, 2))],
                                 H=[np.eye(2)] * 2, K=[[1.0, 0.5], [0.0, 1.0]])
    msgs = validate(s).violations
    assert any("non-finite" in m for m in msgs)
    assert any("not symmetric" in m for m in msgs)


def test_stability_of_dimensionally_invalid_system_raises():
    s = BilinearStochasticSystem(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)),
                                 N=[np.eye(2)], H=[], K=np.zeros((0, 0)))
    with pytest.raises(DimensionError):
        is_mean_square_stable(s)


def test_scalar_closure_value():
    # 2a + n^2 + k h^2 = -2 + 0.25 + 0.09
    L = closure_operator(scalar_system())
    assert L.shape == (1, 1)
    assert L[0, 0] == pytest.approx(-1.66, abs=1e-15)
    rep = is_mean_square_stable(scalar_system())
    assert rep.stable and rep.spectral_abscissa == pytest.approx(-1.66)


def test_scalar_instability_threshold():
    # noise h with 2a + n^2 + h^2 = 0 sits on the boundary
    h = np.sqrt(2 - 0.25)
    assert not is_mean_square_stable(scalar_system(h=h * 1.001)).stable
    assert is_mean_square_stable(scalar_system(h=h * 0.999)).stable


def test_linear_deterministic_stability_matches_hurwitz():
    A = np.array([[-1.0, 3.0], [0.0, -0.5]])
    s = BilinearStochasticSystem(A=A, B=np.ones((2, 1)), C=np.ones((1, 2)),
                                 N=[np.zeros((2, 2))], H=[], K=np.zeros((0, 0)))
    rep = is_mean_square_stable(s)
    # the closure spectrum is {l_i + l_j}
    assert rep.spectral_abscissa == pytest.approx(-1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_closure_spectrum_matches_row_major_oracle(n, seed):
    s = generate_test_system(n, 2, 1, 2, seed)
    rep = is_mean_square_stable(s)
    assert rep.spectral_abscissa == pytest.approx(oracles.closure_abscissa_rowmajor(s),
                                                  abs=1e-9)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_generator_is_deterministic_and_stable(seed):
    a = generate_test_system(5, 2, 2, 2, seed)
    b = generate_test_system(5, 2, 2, 2, seed)
    for x, y in zip((a.A, a.B, a.C, a.K, *a.N, *a.H), (b.A, b.B, b.C, b.K, *b.N, *b.H)):
        np.testing.assert_array_equal(x, y)
    rep = is_mean_square_stable(a)
    assert rep.stable and rep.margin >= 0.1 - 1e-12
    assert np.all(np.linalg.eigvalsh(a.K) > 0)


def test_generator_accept_predicate_shrinks_noise():
    base = generate_test_system(4, 1, 1, 1, 5)
    calls = []

    def accept(s):
        calls.append(np.linalg.norm(s.H[0]))
        return len(calls) >= 3

    filtered = generate_test_system(4, 1, 1, 1, 5, accept=accept)
    assert len(calls) == 3
    assert calls[0] > calls[1] > calls[2]
    assert np.linalg.norm(filtered.H[0]) < np.linalg.norm(base.H[0])
    np.testing.assert_array_equal(filtered.A, base.A)


def test_transformed_is_similarity():
    s = generate_test_system(4, 2, 1, 1, 9)
    rng = np.random.default_rng(1)
    S = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    t = s.transformed(S, np.linalg.inv(S))
    np.testing.assert_allclose(t.C @ t.B, s.C @ s.B, atol=1e-12)
    assert is_mean_square_stable(t).spectral_abscissa == pytest.approx(
        is_mean_square_stable(s).spectral_abscissa, abs=1e-9)
