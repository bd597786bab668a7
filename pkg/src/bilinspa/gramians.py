"""Gramians realizing the reachability and observability inequalities.

Both Gramians are computed as the solutions of the corresponding
equalities, the tightest admissible choice:

* observability ``Q``::

      A^T Q + Q A + sum_k N_k^T Q N_k + sum_ij k_ij H_i^T Q H_j = -C^T C

* reachability ``P = X^{-1}`` where ``X`` solves the Riccati-type equation::

      R(X) = A^T X + X A + sum_k N_k^T X N_k + sum_ij k_ij H_i^T X H_j + X B B^T X = 0

Generalized Lyapunov equations are solved densely through the
``n^2 x n^2`` Kronecker form (cost O(n^6)), so the state dimension is capped
(default 100).
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.linalg as sla

from .exceptions import (ConvergenceError, DimensionCapError, InstabilityError,
                         NotPositiveDefiniteError, PreconditionError, SolverError)
from .system import _closure_matrix, _noise_kron, unvec, vec

__all__ = [
    "GramianPair",
    "ReachabilityResult",
    "lyapunov_operator",
    "riccati_residual",
    "solve_generalized_lyapunov",
    "observability_gramian",
    "reachability_gramian_new",
    "compute_gramians",
    "psd_closure_check",
    "is_positive_definite",
    "riccati_solvable",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 100


def _sym(X):
    return (X + X.T) / 2


def is_positive_definite(X):
    """Cholesky with zero shift succeeds."""
    try:
        np.linalg.cholesky(_sym(X))
    except np.linalg.LinAlgError:
        return False
    return True


def lyapunov_operator(A, N, H, K, X):
    """``A^T X + X A + sum_k N_k^T X N_k + sum_ij k_ij H_i^T X H_j``.

    Plain matrix arithmetic, independent of the Kronecker assembly.
    """
    out = A.T @ X + X @ A
    for Nk in N:
        out = out + Nk.T @ X @ Nk
    for i, Hi in enumerate(H):
        HiX = Hi.T @ X
        for j, Hj in enumerate(H):
            if K[i, j] != 0.0:
                out = out + K[i, j] * (HiX @ Hj)
    return out


def riccati_residual(system, X):
    """``R(X)`` of the reachability equation, evaluated directly."""
    B = system.B
    XB = X @ B
    return lyapunov_operator(system.A, system.N, system.H, system.K, X) + XB @ XB.T


@dataclass(frozen=True)
class LyapunovSolution:
    X: np.ndarray
    rcond: float
    stable: bool


def _lyapunov_solve(A, N, H, K, rhs, *, check_stability, max_dim, noise=None):
    """Solve ``L^T vec(X) = -vec(rhs)``; optionally certify stability.

    Stability is certified with the same factorization: the closure operator
    is resolvent positive, hence Hurwitz iff the solution of
    ``L^T vec(Y) = -vec(I)`` is positive definite. ``noise`` is the
    precomputed Kronecker form of the ``N``/``H`` terms, if available.
    """
    n = A.shape[0]
    if n > max_dim:
        raise DimensionCapError(
            f"dimension exceeds solver cap: n={n} > {max_dim} "
            f"(dense Kronecker solve is O(n^6))")
    Lt = _closure_matrix(A, N, H, K, noise).T
    if not np.all(np.isfinite(Lt)):
        raise SolverError("non-finite coefficients")
    anorm = np.linalg.norm(Lt, 1)
    lu, piv, info = sla.lapack.dgetrf(Lt)
    if info > 0:
        raise SolverError(f"singular generalized Lyapunov operator (pivot {info})")
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if rcond < np.finfo(float).eps:
        raise SolverError(
            f"generalized Lyapunov operator numerically singular (rcond={rcond:.2e})")
    rhs_cols = [-vec(rhs)]
    if check_stability:
        rhs_cols.append(-vec(np.eye(n)))
    sol, info = sla.lapack.dgetrs(lu, piv, np.column_stack(rhs_cols))
    stable = True
    if check_stability:
        stable = is_positive_definite(unvec(sol[:, 1], n))
    return LyapunovSolution(_sym(unvec(sol[:, 0], n)), float(rcond), stable)


def solve_generalized_lyapunov(A, N, H, K, rhs, *, check_stability=True,
                               max_dim=DEFAULT_MAX_DIM):
    """Solve ``A^T X + X A + sum N^T X N + sum k_ij H_i^T X H_j = -rhs``.

    Parameters
    ----------
    A : (n, n) array
    N, H : sequences of (n, n) arrays
    K : (v, v) array
        Noise covariance, ``v = len(H)``.
    rhs : (n, n) symmetric array
    check_stability : bool
        Refuse to return a solution when the closure operator is not
        Hurwitz.
    max_dim : int
        Largest admissible ``n``.

    Returns
    -------
    X : (n, n) array
        Symmetrized solution.

    Raises
    ------
    InstabilityError
        If ``check_stability`` and the system is not mean-square stable.
    SolverError
        If the Kronecker system is singular; the message carries ``rcond``.
    DimensionCapError
        If ``n > max_dim``.
    """
    A = np.asarray(A, dtype=float)
    K = np.asarray(K, dtype=float).reshape(len(H), len(H))
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != A.shape:
        raise PreconditionError(f"rhs shape {rhs.shape} != {A.shape}")
    sol = _lyapunov_solve(A, N, H, K, _sym(rhs), check_stability=check_stability,
                          max_dim=max_dim)
    if check_stability and not sol.stable:
        raise InstabilityError("system is not mean-square stable; refusing to solve")
    return sol.X


def observability_gramian(system, *, max_dim=DEFAULT_MAX_DIM):
    """Observability Gramian ``Q`` (right-hand side ``C^T C``).

    Returns
    -------
    Q : (n, n) array
    positive_definite : bool
        False signals a degenerate (unobservable-like) system that balancing
        will refuse.
    """
    C = system.C
    Q = solve_generalized_lyapunov(system.A, system.N, system.H, system.K, C.T @ C,
                                   max_dim=max_dim)
    return Q, is_positive_definite(Q)


@dataclass(frozen=True)
class ReachabilityResult:
    P: np.ndarray
    X: np.ndarray
    iterations: int
    residual: float
    residual_trace: tuple = field(default=())


def _spd_inverse(X):
    c = sla.cho_factor(_sym(X), lower=True)
    return _sym(sla.cho_solve(c, np.eye(X.shape[0])))


def reachability_gramian_new(system, newton_tol=1e-10, max_iters=50, seed_shift=None,
                             *, max_dim=DEFAULT_MAX_DIM, check_stability=True):
    """Reachability Gramian ``P = X^{-1}`` from the Riccati-type equation.

    Newton's method on ``R(X) = 0``: each step solves the generalized
    Lyapunov equation with drift ``A_j = A + B B^T X_j``::

        A_j^T X+ + X+ A_j + sum N^T X+ N + sum k_ij H_i^T X+ H_j = X_j B B^T X_j

    followed by the damped update ``X <- X_j + theta (X+ - X_j)`` where
    ``theta`` is halved until ``||R||_F`` decreases.

    The iteration starts from ``X_0 = P_0^{-1}`` with ``P_0`` the solution of
    ``A P + P A^T + B B^T + eps I = 0``. By default ``eps = 0`` is tried first,
    which makes ``X_0`` the exact root when ``N = H = 0``; if that ``P_0`` is
    not positive definite, ``eps = 1e-6 ||B B^T||_F`` is used. An explicit
    ``seed_shift`` fixes ``eps``. Every positive definite ``X`` with
    ``R(X) <= 0`` lies below ``X_0`` (up to the ``eps`` regularization), so the
    iteration decreases towards the maximal root. Starting near zero would
    converge to the trivial root ``X = 0`` instead.

    Strong noise can remove the positive definite root altogether; Newton
    then fails to converge and :class:`ConvergenceError` is raised.

    Converged when ``||R(X)||_F <= newton_tol * max(1, ||X||_F)`` or when
    ``||R(X)||_F`` is below ``newton_tol`` times the summed norms of the terms
    of ``R(X)``. The second test matters when ``P`` is ill-conditioned: then
    ``X`` is large, the quadratic term dominates and the absolute residual
    cannot drop below round-off in ``X B B^T X``.

    Raises
    ------
    PreconditionError
        ``B`` is zero.
    ConvergenceError
        No convergence within ``max_iters``; ``best`` holds the best
        iterate.
    NotPositiveDefiniteError
        The accepted iterate is not positive definite.
    """
    A, B, N, H, K = system.A, system.B, system.N, system.H, system.K
    n = system.n
    if n > max_dim:
        raise DimensionCapError(f"dimension exceeds solver cap: n={n} > {max_dim}")
    G = B @ B.T
    gnorm = np.linalg.norm(G)
    if gnorm == 0.0:
        raise PreconditionError("B must be nonzero")
    noise = _noise_kron(N, H, K, n)
    if check_stability:
        if not _lyapunov_solve(A, N, H, K, np.eye(n), check_stability=True,
                               max_dim=max_dim, noise=noise).stable:
            raise InstabilityError("system is not mean-square stable")
    shifts = [0.0, 1e-6 * gnorm] if seed_shift is None else [float(seed_shift)]
    for eps in shifts:
        P0 = _sym(sla.solve_continuous_lyapunov(A, -(G + eps * np.eye(n))))
        try:
            X = _spd_inverse(P0)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NotPositiveDefiniteError("initial Lyapunov solution not SPD")

    def rnorm(Y):
        return np.linalg.norm(riccati_residual(system, Y))

    res = rnorm(X)
    trace = [res]
    it = 0
    def converged(Y, r):
        return (r <= newton_tol * max(1.0, np.linalg.norm(Y))
                or r <= newton_tol * _riccati_scale(system, Y))

    while not converged(X, res):
        if it >= max_iters:
            raise ConvergenceError(
                f"Newton did not converge in {max_iters} iterations "
                f"(residual {res:.3e})", best=X, residual=res, iterations=it)
        it += 1
        Aj = A + G @ X
        try:
            step = _lyapunov_solve(Aj, N, H, K, -(X @ G @ X), check_stability=False,
                                   max_dim=max_dim, noise=noise).X
        except SolverError as exc:
            raise ConvergenceError(f"Newton step {it} failed: {exc}", best=X,
                                   residual=res, iterations=it) from exc
        theta = 1.0
        while True:
            Xt = _sym(X + theta * (step - X))
            rt = rnorm(Xt)
            if rt < res:
                break
            theta /= 2
            if theta < 2.0 ** -30:
                raise ConvergenceError(
                    f"line search failed at iteration {it} (residual {res:.3e})",
                    best=X, residual=res, iterations=it)
        X, res = Xt, rt
        trace.append(res)
        log.debug("newton it=%d theta=%g residual=%.3e", it, theta, res)

    if not is_positive_definite(X):
        raise NotPositiveDefiniteError("Riccati solution X is not positive definite")
    P = _spd_inverse(X)
    return ReachabilityResult(P=P, X=X, iterations=it, residual=float(res),
                              residual_trace=tuple(float(r) for r in trace))


@dataclass(frozen=True)
class GramianPair:
    """``P`` (with ``X = P^{-1}``), ``Q`` and their equation residuals.

    ``residual_Q`` and ``residual_X`` are Frobenius norms; the ``rel_``
    variants divide by the size of the terms being cancelled.
    """

    P: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    residual_Q: float
    residual_X: float
    rel_residual_Q: float
    rel_residual_X: float
    iterations: int
    Q_positive_definite: bool
    residual_trace: tuple = ()

    def diagnostics(self):
        return {
            "residual_Q": self.residual_Q,
            "residual_X": self.residual_X,
            "rel_residual_Q": self.rel_residual_Q,
            "rel_residual_X": self.rel_residual_X,
            "newton_iterations": self.iterations,
            "newton_residual_trace": list(self.residual_trace),
            "Q_positive_definite": self.Q_positive_definite,
        }


def _riccati_scale(system, X):
    XB = X @ system.B
    return _term_scale(system, X) + np.linalg.norm(XB @ XB.T)


def _term_scale(system, Y):
    """Sum of Frobenius norms of the terms in the operator applied to ``Y``."""
    A = system.A
    s = 2 * np.linalg.norm(A.T @ Y)
    s += sum(np.linalg.norm(Nk.T @ Y @ Nk) for Nk in system.N)
    s += sum(abs(system.K[i, j]) * np.linalg.norm(Hi.T @ Y @ Hj)
             for i, Hi in enumerate(system.H) for j, Hj in enumerate(system.H))
    return s


def compute_gramians(system, newton_tol=1e-10, max_iters=50, seed_shift=None,
                     max_dim=DEFAULT_MAX_DIM):
    """Both Gramians with residuals measured by direct matrix arithmetic."""
    Q, q_pd = observability_gramian(system, max_dim=max_dim)
    reach = reachability_gramian_new(system, newton_tol=newton_tol, max_iters=max_iters,
                                     seed_shift=seed_shift, max_dim=max_dim,
                                     check_stability=False)
    CtC = system.C.T @ system.C
    rQ = np.linalg.norm(lyapunov_operator(system.A, system.N, system.H, system.K, Q) + CtC)
    rX = np.linalg.norm(riccati_residual(system, reach.X))
    XB = reach.X @ system.B
    scale_Q = _term_scale(system, Q) + np.linalg.norm(CtC)
    scale_X = _term_scale(system, reach.X) + np.linalg.norm(XB @ XB.T)
    return GramianPair(
        P=reach.P, X=reach.X, Q=Q,
        residual_Q=float(rQ), residual_X=float(rX),
        rel_residual_Q=float(rQ / scale_Q) if scale_Q else 0.0,
        rel_residual_X=float(rX / scale_X) if scale_X else 0.0,
        iterations=reach.iterations, Q_positive_definite=q_pd,
        residual_trace=reach.residual_trace,
    )


def psd_closure_check(A_list, K):
    """Smallest eigenvalue of ``sum_ij k_ij A_i^T A_j``.

    Nonnegative whenever ``K`` is positive semidefinite.
    """
    A_list = [np.atleast_2d(np.asarray(Ai, dtype=float)) for Ai in A_list]
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if not A_list:
        return 0.0
    d = A_list[0].shape[1]
    S = np.zeros((d, d))
    for i, Ai in enumerate(A_list):
        for j, Aj in enumerate(A_list):
            S += K[i, j] * (Ai.T @ Aj)
    return float(np.linalg.eigvalsh(_sym(S)).min())


def riccati_solvable(system, *, noise_factor=1.0, newton_tol=1e-10, max_iters=15,
                     max_dim=DEFAULT_MAX_DIM):
    """Whether Newton reaches a positive definite root of ``R(X) = 0``.

    With ``noise_factor > 1`` the test is run on the system with ``N_k`` and
    ``H_i`` multiplied by that factor, a safety margin against the fold at
    which the root disappears. Meant as the ``accept`` predicate of
    :func:`~bilinspa.system.generate_test_system`.
    """
    probe = system
    if noise_factor != 1.0:
        probe = system.replace(N=[noise_factor * Nk for Nk in system.N],
                               H=[noise_factor * Hi for Hi in system.H])
    try:
        reachability_gramian_new(probe, newton_tol=newton_tol, max_iters=max_iters,
                                 max_dim=max_dim)
    except (SolverError, InstabilityError, NotPositiveDefiniteError):
        return False
    return True
