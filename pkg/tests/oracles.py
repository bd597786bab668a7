"""Independent reference computations used by the tests.

Nothing here calls into bilinspa's solvers: vectorization is row-major and
all linear systems are assembled entry by entry.
"""

import numpy as np


def pi_op(N, H, K, X):
    out = np.zeros_like(X)
    for Nk in N:
        out += Nk.T @ X @ Nk
    for i, Hi in enumerate(H):
        for j, Hj in enumerate(H):
            out += K[i][j] * Hi.T @ X @ Hj
    return out


def riccati(sys, X):
    A, B = sys.A, sys.B
    return A.T @ X + X @ A + pi_op(sys.N, sys.H, sys.K, X) + X @ B @ B.T @ X


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def _vech(M):
    return M[np.triu_indices(M.shape[0])]


def _unvech(x, n):
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = x
    return M + np.triu(M, 1).T


def linear_map_solve(apply, n):
    """Solve ``apply(X) = R`` over symmetric X by assembling the matrix of ``apply``."""
    basis = _sym_basis(n)
    J = np.column_stack([_vech(apply(E)) for E in basis])
    return lambda R: _unvech(np.linalg.solve(J, _vech(R)), n)


def observability_oracle(sys):
    n = sys.n
    op = lambda X: sys.A.T @ X + X @ sys.A + pi_op(sys.N, sys.H, sys.K, X)
    return linear_map_solve(op, n)(-sys.C.T @ sys.C)


def riccati_newton_oracle(sys, tol=1e-13, max_iter=200):
    """Plain Newton on vech(R(X)) = 0, started above the maximal root.

    The start is the inverse of the linear reachability Gramian
    (``A P + P A^T + B B^T = 0``), each step solves the full Jacobian
    system, and a backtracking search on ``||R||`` guards the step.
    """
    n = sys.n
    A, B = sys.A, sys.B
    G = B @ B.T
    P0 = linear_map_solve(lambda P: A @ P + P @ A.T, n)(-G)
    X = np.linalg.inv(P0)
    X = (X + X.T) / 2
    basis = _sym_basis(n)
    for _ in range(max_iter):
        R = riccati(sys, X)
        scale = max(1.0, np.linalg.norm(X))
        if np.linalg.norm(R) <= tol * scale:
            return X
        XG = X @ G
        J = np.column_stack([
            _vech(A.T @ E + E @ A + pi_op(sys.N, sys.H, sys.K, E) + E @ XG.T + XG @ E)
            for E in basis
        ])
        step = _unvech(np.linalg.solve(J, -_vech(R)), n)
        t = 1.0
        f0 = np.linalg.norm(R)
        while t > 1e-12:
            Xt = X + t * step
            if np.linalg.norm(riccati(sys, Xt)) < f0:
                break
            t /= 2
        X = Xt
    raise RuntimeError("oracle Newton did not converge")


def closure_abscissa_rowmajor(sys):
    """Spectral abscissa of the second-moment operator with row-major vec."""
    n = sys.n
    I = np.eye(n)
    L = np.kron(sys.A, I) + np.kron(I, sys.A)
    for Nk in sys.N:
        L += np.kron(Nk, Nk)
    for i, Hi in enumerate(sys.H):
        for j, Hj in enumerate(sys.H):
            L += sys.K[i][j] * np.kron(Hi, Hj)
    return float(np.max(np.linalg.eigvals(L).real))
