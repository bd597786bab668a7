import numpy as np
import pytest

from bilinspa import (BilinearStochasticSystem, balance, compute_gramians,
                      generate_test_system, group_hsvs, partition, spa_chain, spa_reduce)
from bilinspa.balancing import BalancedRealization
from bilinspa.exceptions import (InadmissibleOrderError, NotPositiveDefiniteError,
                                 PreconditionError, SingularBlockError)
from bilinspa.reduction import assemble_neighbor_form, neighbor_equivalence_check
from conftest import solvable


def _balanced(system):
    g = compute_gramians(system)
    return balance(system, g.P, g.Q), g


def paired_system(noise=0.05):
    """Two identical decoupled copies: every Hankel singular value is doubled."""
    B = np.array([[1.0, 0], [0, 1], [1, 0], [0, 1]])
    return BilinearStochasticSystem(A=np.diag([-1.0, -1, -3, -3]), B=B, C=B.T.copy(),
                                    N=[noise * np.eye(4)] * 2, H=[noise * np.eye(4)],
                                    K=np.eye(1))


def test_balancing_identities(small_suite):
    for s in small_suite:
        bal, g = _balanced(s)
        Sig = np.diag(bal.sigma)
        np.testing.assert_allclose(bal.S @ g.P @ bal.S.T, Sig, atol=1e-10 * bal.sigma[0])
        np.testing.assert_allclose(bal.S_inv.T @ g.Q @ bal.S_inv, Sig,
                                   atol=1e-10 * bal.sigma[0])
        np.testing.assert_allclose(bal.S @ bal.S_inv, np.eye(s.n), atol=1e-10)
        assert np.all(np.diff(bal.sigma) <= 0)


def test_balanced_system_gramians_are_diagonal():
    s = generate_test_system(5, 2, 2, 2, 31, accept=solvable)
    bal, _ = _balanced(s)
    g2 = compute_gramians(bal.system)
    np.testing.assert_allclose(g2.P, np.diag(bal.sigma), atol=1e-8 * bal.sigma[0])
    np.testing.assert_allclose(g2.Q, np.diag(bal.sigma), atol=1e-8 * bal.sigma[0])


def test_sign_convention_makes_transform_deterministic():
    s = generate_test_system(5, 2, 2, 2, 32, accept=solvable)
    g = compute_gramians(s)
    a = balance(s, g.P, g.Q)
    b = balance(s, g.P.copy(), g.Q.copy())
    np.testing.assert_array_equal(a.S, b.S)


def test_hsvs_invariant_under_state_transform():
    s = generate_test_system(4, 2, 2, 1, 33, accept=solvable)
    T = np.random.default_rng(1).normal(size=(4, 4)) + 3 * np.eye(4)
    a, _ = _balanced(s)
    b, _ = _balanced(s.transformed(T, np.linalg.inv(T)))
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-8)


def test_grouping():
    g = group_hsvs([3.0, 1.0, 1.0 - 1e-12, 0.2])
    assert g.multiplicities == (1, 2, 1)
    assert g.cuts == (1, 3)
    assert g.boundaries() == (1, 3, 4)
    vals, mult = g.truncated(1)
    np.testing.assert_allclose(vals, [1.0 - 5e-13, 0.2])
    assert mult == (2, 1)
    assert g.truncated(4)[0].size == 0
    with pytest.raises(InadmissibleOrderError) as info:
        g.truncated(2)
    assert info.value.cuts == (1, 3)
    with pytest.raises(PreconditionError):
        group_hsvs([1.0, 2.0])


def test_repeated_values_are_grouped_and_splitting_refused():
    bal, _ = _balanced(paired_system())
    assert bal.grouping.multiplicities == (2, 2)
    with pytest.raises(InadmissibleOrderError):
        spa_reduce(bal, 1)
    with pytest.raises(InadmissibleOrderError):
        partition(bal, 3)
    assert spa_reduce(bal, 2).r == 2


def test_sigma_floor_names_index():
    s = generate_test_system(4, 1, 1, 1, 3, accept=solvable)
    g = compute_gramians(s)
    with pytest.raises(PreconditionError, match=r"sigma\[\d\]"):
        balance(s, g.P, g.Q, sigma_floor=0.5)


def test_indefinite_gramian_refused():
    s = generate_test_system(3, 1, 1, 1, 3)
    with pytest.raises(NotPositiveDefiniteError):
        balance(s, -np.eye(3), np.eye(3))


def test_dc_gain_preserved_in_linear_case():
    # for N = H = 0, SPA matches the transfer function at s = 0
    s = generate_test_system(7, 2, 2, 1, 12)
    s = s.replace(N=[np.zeros((7, 7))] * 2, H=[np.zeros((7, 7))])
    bal, _ = _balanced(s)
    G0 = s.C @ np.linalg.solve(-s.A, s.B)
    for r in bal.grouping.cuts:
        rom = spa_reduce(bal, r)
        Gr = rom.D + rom.C @ np.linalg.solve(-rom.A, rom.B)
        np.testing.assert_allclose(Gr, G0, rtol=1e-9, atol=1e-12)
        assert np.max(np.linalg.eigvals(rom.A).real) < 0
        assert all(np.all(E == 0) for E in rom.E) and all(np.all(F == 0) for F in rom.F)


def test_spa_formulas_against_explicit_inverse(small_suite):
    s = small_suite[-1]
    bal, _ = _balanced(s)
    r = bal.grouping.cuts[1]
    pt = partition(bal, r)
    inv = np.linalg.inv(pt.A22)
    rom = spa_reduce(bal, r)
    np.testing.assert_allclose(rom.A, pt.A11 - pt.A12 @ inv @ pt.A21, atol=1e-12)
    np.testing.assert_allclose(rom.D, -pt.C2 @ inv @ pt.B2, atol=1e-12)
    N12 = pt.N[0][1]
    np.testing.assert_allclose(rom.E[0], -N12 @ inv @ pt.B2, atol=1e-12)
    np.testing.assert_allclose(rom.N[0], pt.N[0][0] - N12 @ inv @ pt.A21, atol=1e-12)
    H12 = pt.H[1][1]
    np.testing.assert_allclose(rom.F[1], -H12 @ inv @ pt.B2, atol=1e-12)
    np.testing.assert_array_equal(rom.K, s.K)


def test_full_order_is_balanced_system(small_suite):
    bal, _ = _balanced(small_suite[0])
    rom = spa_reduce(bal, bal.n)
    np.testing.assert_array_equal(rom.A, bal.system.A)
    assert not rom.D.any()


def test_neighbor_form(small_suite):
    for s in small_suite:
        bal, _ = _balanced(s)
        for r in bal.grouping.cuts:
            assert neighbor_equivalence_check(bal, r) <= 1e-10
        assert neighbor_equivalence_check(bal, bal.n) == 0.0


def test_neighbor_coupling_map():
    s = generate_test_system(5, 2, 2, 2, 44, accept=solvable)
    bal, _ = _balanced(s)
    nf = assemble_neighbor_form(bal, (2, 3))
    rng = np.random.default_rng(0)
    x, u = rng.normal(size=2), rng.normal(size=2)
    # the eliminated states are (x2, x3) = -h; in the larger model (x3
    # eliminated) the state (x, -h1) makes the x2 drift row vanish
    big = nf.larger_rom()
    x12 = np.concatenate([x, -nf.h(x, u)[:1]])
    np.testing.assert_allclose((big.A @ x12 + big.B @ u)[2:], 0.0, atol=1e-12)


def test_spa_chain_orders(small_suite):
    bal, _ = _balanced(small_suite[-1])
    chain = spa_chain(bal, bal.grouping.cuts[0])
    assert [m.r for m in chain] == list(bal.grouping.cuts)


def test_singular_block_refused():
    s = BilinearStochasticSystem(A=[[-1.0, 1.0], [1.0, 0.0]], B=np.ones((2, 1)),
                                 C=np.ones((1, 2)), N=[np.zeros((2, 2))], H=[],
                                 K=np.zeros((0, 0)))
    bal = BalancedRealization(system=s, sigma=np.array([2.0, 1.0]), S=np.eye(2),
                              S_inv=np.eye(2), grouping=group_hsvs([2.0, 1.0]))
    with pytest.raises(SingularBlockError):
        spa_reduce(bal, 1)
