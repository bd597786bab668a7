"""Stochastic bilinear control systems and their mean-square stability.

The systems handled here have the form

    dx = [A x + B u + sum_k N_k x u_k] dt + sum_i H_i x(t-) dM_i
    y  = C x

where ``M`` is a mean-zero square-integrable Levy process with covariance
``E[M(t) M(t)^T] = K t``.

Vectorization convention
------------------------
``vec`` stacks columns (Fortran order), so ``vec(A X B) = (B^T kron A) vec(X)``.
With this convention the closure operator

    L = A kron I + I kron A + sum_k N_k kron N_k + sum_ij k_ij H_i kron H_j

acts on ``vec(X)`` as ``X -> A X + X A^T + sum_k N_k X N_k^T +
sum_ij k_ij H_j X H_i^T`` and its transpose acts as the observability-type
operator ``X -> A^T X + X A + sum_k N_k^T X N_k + sum_ij k_ij H_i^T X H_j``.
Because ``K`` is symmetric, swapping ``H_i kron H_j`` for ``H_j kron H_i``
in the double sum gives the same matrix.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import ConvergenceError, DimensionError, PreconditionError

__all__ = [
    "BilinearStochasticSystem",
    "ValidationReport",
    "StabilityReport",
    "validate",
    "closure_operator",
    "is_mean_square_stable",
    "generate_test_system",
    "vec",
    "unvec",
]

DEFAULT_STABILITY_TOL = 1e-9


def vec(X):
    """Column-stacking vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, n):
    """Inverse of :func:`vec` for an ``n x n`` matrix."""
    return np.asarray(x).reshape((n, n), order="F")


def _frozen(a, ndim=2):
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BilinearStochasticSystem:
    """Coefficients ``(A, B, C, N_1..N_m, H_1..H_v, K)`` of a bilinear SDE.

    Arrays are copied and made read-only on construction. No invariant is
    enforced here; use :func:`validate` to obtain a list of violations.

    ``B`` may have zero columns and ``N``/``H`` may be empty, which covers
    linear and deterministic special cases.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: tuple = ()
    H: tuple = ()
    K: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A))
        object.__setattr__(self, "B", _frozen(self.B))
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C.reshape(1, -1)
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "N", tuple(_frozen(Nk) for Nk in self.N))
        object.__setattr__(self, "H", tuple(_frozen(Hi) for Hi in self.H))
        K = np.array(self.K, dtype=float)
        if K.size == 0:
            K = K.reshape(0, 0)
        object.__setattr__(self, "K", _frozen(K))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def v(self):
        return len(self.H)

    def transformed(self, S, S_inv):
        """Return the system in coordinates ``x_new = S x``."""
        return BilinearStochasticSystem(
            A=S @ self.A @ S_inv,
            B=S @ self.B,
            C=self.C @ S_inv,
            N=[S @ Nk @ S_inv for Nk in self.N],
            H=[S @ Hi @ S_inv for Hi in self.H],
            K=self.K,
        )

    def replace(self, **changes):
        fields = dict(A=self.A, B=self.B, C=self.C, N=self.N, H=self.H, K=self.K)
        fields.update(changes)
        return BilinearStochasticSystem(**fields)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class StabilityReport:
    """Mean-square stability verdict.

    ``margin`` is the distance ``-spectral_abscissa`` of the closure
    spectrum to the imaginary axis (negative when unstable).
    """

    spectral_abscissa: float
    stable: bool
    margin: float
    tol: float = DEFAULT_STABILITY_TOL


def validate(system):
    """List every violated invariant of ``system``.

    Returns
    -------
    ValidationReport
        Empty ``violations`` means the system is valid.
    """
    out = []
    A, B, C, K = system.A, system.B, system.C, system.K
    n = A.shape[0]
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        out.append(f"A not square: shape {A.shape}")
    if B.shape[0] != n:
        out.append(f"B row count {B.shape[0]} != n={n}")
    if C.shape[1] != n:
        out.append(f"C column count {C.shape[1]} != n={n}")
    m = B.shape[1]
    if len(system.N) != m:
        out.append(f"N length mismatch: {len(system.N)} matrices for m={m} inputs")
    for k, Nk in enumerate(system.N):
        if Nk.shape != (n, n):
            out.append(f"N[{k}] shape {Nk.shape} != ({n}, {n})")
    v = len(system.H)
    for i, Hi in enumerate(system.H):
        if Hi.shape != (n, n):
            out.append(f"H[{i}] shape {Hi.shape} != ({n}, {n})")
    if K.shape != (v, v):
        out.append(f"K shape {K.shape} != ({v}, {v}) for v={v} noise channels")

    mats = [("A", A), ("B", B), ("C", C), ("K", K)]
    mats += [(f"N[{k}]", Nk) for k, Nk in enumerate(system.N)]
    mats += [(f"H[{i}]", Hi) for i, Hi in enumerate(system.H)]
    for name, M in mats:
        if not np.all(np.isfinite(M)):
            out.append(f"{name} has non-finite entries")

    if K.ndim == 2 and K.shape[0] == K.shape[1] and K.size and np.all(np.isfinite(K)):
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
            out.append("K not symmetric")
        else:
            lam = np.linalg.eigvalsh((K + K.T) / 2)
            if lam.min() < -1e-12 * np.linalg.norm(K, 2):
                out.append(f"K not PSD (min eigenvalue {lam.min():.3e})")
    return ValidationReport(tuple(out))


def _check_dims(system):
    rep = validate(system)
    dim_msgs = [s for s in rep.violations if "finite" not in s and "PSD" not in s
                and "symmetric" not in s]
    if dim_msgs:
        raise DimensionError("; ".join(dim_msgs))


def _noise_kron(N, H, K, n):
    """``sum_k N_k kron N_k + sum_ij k_ij H_i kron H_j``."""
    L = np.zeros((n * n, n * n))
    for Nk in N:
        L += np.kron(Nk, Nk)
    for i, Hi in enumerate(H):
        for j, Hj in enumerate(H):
            if K[i, j] != 0.0:
                L += K[i, j] * np.kron(Hi, Hj)
    return L


def _kron_sum(A):
    I = np.eye(A.shape[0])
    return np.kron(A, I) + np.kron(I, A)


def _closure_matrix(A, N, H, K, noise=None):
    if noise is None:
        noise = _noise_kron(N, H, K, A.shape[0])
    return _kron_sum(A) + noise


def closure_operator(system):
    """Matrix of the mean-square closure operator, size ``n^2 x n^2``.

    See the module docstring for the ``vec`` convention.
    """
    _check_dims(system)
    return _closure_matrix(system.A, system.N, system.H, system.K)


def is_mean_square_stable(system, tol=DEFAULT_STABILITY_TOL):
    """Decide mean-square stability from the closure spectrum.

    The system is declared stable iff the spectral abscissa of
    :func:`closure_operator` is below ``-tol``.
    """
    if tol < 0:
        raise PreconditionError("tol must be >= 0")
    L = closure_operator(system)
    if not np.all(np.isfinite(L)):
        raise PreconditionError("closure operator has non-finite entries")
    lam = sla.eigvals(L, check_finite=False)
    abscissa = float(lam.real.max())
    return StabilityReport(
        spectral_abscissa=abscissa,
        stable=abscissa < -tol,
        margin=-abscissa,
        tol=tol,
    )


def _shifted_stable(A, N, H, K, shift):
    """Test whether ``closure + shift*I`` is Hurwitz without an eigen-solve.

    The closure operator is resolvent positive on symmetric matrices, so it
    is Hurwitz iff the solution of ``L(X) = -I`` exists and is positive
    definite.
    """
    n = A.shape[0]
    L = _closure_matrix(A, N, H, K) + shift * np.eye(n * n)
    try:
        x = sla.solve(L, -vec(np.eye(n)), check_finite=False)
    except (sla.LinAlgError, ValueError):
        return False
    X = unvec(x, n)
    X = (X + X.T) / 2
    try:
        np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return False
    return True


def generate_test_system(n, m, p, v, seed, stability_margin=0.1, max_halvings=60,
                         accept=None):
    """Draw a random mean-square stable system, deterministic in ``seed``.

    ``A0``, ``B``, ``C``, ``N_k``, ``H_i`` get standard normal entries.
    ``A = A0 - alpha I`` with ``alpha`` chosen so that ``A`` has spectral
    abscissa ``-(0.5 + stability_margin)``; ``N_k`` and ``H_i`` are then
    scaled by a common factor ``rho`` that is halved until the closure
    abscissa is at most ``-stability_margin``. ``K`` is a random
    correlation-like SPD matrix.

    ``accept``, if given, is an extra predicate on the candidate system;
    halving continues until it also returns True. The test suites use it to
    ask for systems whose reachability Riccati equation has a positive
    definite solution, which strong noise destroys.

    Raises
    ------
    PreconditionError
        On non-positive dimensions or margin.
    ConvergenceError
        If ``max_halvings`` halvings do not reach the margin (or satisfy
        ``accept``).
    """
    if min(n, p) < 1 or m < 0 or v < 0:
        raise PreconditionError("need n, p >= 1 and m, v >= 0")
    if not stability_margin > 0:
        raise PreconditionError("stability_margin must be > 0")
    rng = np.random.default_rng(seed)
    A0 = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    N0 = [rng.standard_normal((n, n)) for _ in range(m)]
    H0 = [rng.standard_normal((n, n)) for _ in range(v)]
    if v:
        W = rng.standard_normal((v, v))
        K = W @ W.T / v + np.eye(v)
        d = np.sqrt(np.diag(K))
        K = K / np.outer(d, d)
    else:
        K = np.zeros((0, 0))

    alpha = np.linalg.eigvals(A0).real.max() + 0.5 + stability_margin
    A = A0 - alpha * np.eye(n)

    rho = 1.0
    for _ in range(max_halvings + 1):
        N = [rho * Nk for Nk in N0]
        H = [rho * Hi for Hi in H0]
        if _shifted_stable(A, N, H, K, stability_margin):
            candidate = BilinearStochasticSystem(A=A, B=B, C=C, N=N, H=H, K=K)
            if accept is None or accept(candidate):
                return candidate
        rho /= 2
    abscissa = np.linalg.eigvals(_closure_matrix(A, N, H, K)).real.max()
    raise ConvergenceError(
        f"no stable scaling after {max_halvings} halvings; "
        f"final abscissa {abscissa:.3e}",
        residual=abscissa,
        iterations=max_halvings,
    )
