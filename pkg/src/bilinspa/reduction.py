"""Singular perturbation approximation (SPA) of balanced bilinear systems.

Setting ``dx_2 = 0`` in the balanced equations, dropping the bilinear and
diffusion terms of that block and solving for ``x_2`` gives the reduced model::

    dx_r = [Ab x_r + Bb u + sum_k (Nb_k x_r + Eb_k u) u_k] dt
           + sum_i (Hb_i x_r + Fb_i u) dM_i
    y_r  = Cb x_r + Db u

with ``Ab = A11 - A12 A22^{-1} A21``, ``Bb = B1 - A12 A22^{-1} B2``,
``Cb = C1 - C2 A22^{-1} A21``, ``Db = -C2 A22^{-1} B2``,
``Nb_k = N_k11 - N_k12 A22^{-1} A21``, ``Eb_k = -N_k12 A22^{-1} B2``,
``Hb_i = H_i11 - H_i12 A22^{-1} A21`` and ``Fb_i = -H_i12 A22^{-1} B2``.
"""

from dataclasses import dataclass
import logging
import warnings

import numpy as np
import scipy.linalg as sla

from .balancing import partition
from .exceptions import InadmissibleOrderError, PreconditionError, SingularBlockError

__all__ = [
    "ReducedModel",
    "NeighborForm",
    "spa_reduce",
    "assemble_neighbor_form",
    "neighbor_equivalence_check",
    "spa_chain",
]

log = logging.getLogger(__name__)

COND_REFUSE = 1e12
COND_WARN = 1e8


@dataclass(frozen=True)
class ReducedModel:
    """SPA reduced-order model; ``E`` and ``F`` hold ``r x m`` matrices."""

    r: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: tuple
    F: tuple
    H: tuple
    N: tuple
    K: np.ndarray
    cond_A22: float = 1.0

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def v(self):
        return len(self.H)

    def slots(self):
        """Name-to-matrix mapping over every coefficient, for comparisons."""
        out = {"A": self.A, "B": self.B, "C": self.C, "D": self.D}
        for name in ("E", "F", "H", "N"):
            for k, M in enumerate(getattr(self, name)):
                out[f"{name}[{k}]"] = M
        return out


def _solver(A22, label="A22"):
    """LU factorization of a block to be inverted, with a condition check."""
    cond = float(np.linalg.cond(A22)) if A22.size else 1.0
    if not np.isfinite(cond) or cond > COND_REFUSE:
        raise SingularBlockError(
            f"{label} is singular or ill-conditioned (cond={cond:.3e} > {COND_REFUSE:g})")
    if cond > COND_WARN:
        warnings.warn(f"{label} is ill-conditioned (cond={cond:.3e})", RuntimeWarning,
                      stacklevel=3)
    lu = sla.lu_factor(A22, check_finite=False) if A22.size else None

    def solve(M):
        if lu is None:
            return np.zeros((0, M.shape[1]))
        return sla.lu_solve(lu, M, check_finite=False)

    return solve, cond


def _full_order(balanced):
    sy = balanced.system
    n, m = sy.n, sy.m
    z = np.zeros((n, m))
    return ReducedModel(
        r=n, A=sy.A.copy(), B=sy.B.copy(), C=sy.C.copy(), D=np.zeros((sy.p, m)),
        E=tuple(z.copy() for _ in sy.N), F=tuple(z.copy() for _ in sy.H),
        H=tuple(Hi.copy() for Hi in sy.H), N=tuple(Nk.copy() for Nk in sy.N),
        K=sy.K.copy(),
    )


def spa_reduce(balanced, r):
    """SPA reduced model of order ``r`` from a balanced realization.

    ``r`` must be ``n`` or a cut of the Hankel singular value grouping.
    Products with ``A22^{-1}`` are computed by LU solves.

    Raises
    ------
    SingularBlockError
        ``cond(A22) > 1e12``; a warning is issued above ``1e8``.
    InadmissibleOrderError
        ``r`` splits a group of equal Hankel singular values.
    """
    if r == balanced.n:
        return _full_order(balanced)
    pt = partition(balanced, r)
    solve, cond = _solver(pt.A22)
    W_x = solve(pt.A21)   # A22^{-1} A21
    W_u = solve(pt.B2)    # A22^{-1} B2
    return ReducedModel(
        r=r,
        A=pt.A11 - pt.A12 @ W_x,
        B=pt.B1 - pt.A12 @ W_u,
        C=pt.C1 - pt.C2 @ W_x,
        D=-pt.C2 @ W_u,
        E=tuple(-N12 @ W_u for (_, N12, _, _) in pt.N),
        F=tuple(-H12 @ W_u for (_, H12, _, _) in pt.H),
        H=tuple(H11 - H12 @ W_x for (H11, H12, _, _) in pt.H),
        N=tuple(N11 - N12 @ W_x for (N11, N12, _, _) in pt.N),
        K=balanced.system.K.copy(),
        cond_A22=cond,
    )


def _split3(M, i, j):
    """Three-way split of rows (and columns if 2-D square) at ``i < j``."""
    idx = (slice(0, i), slice(i, j), slice(j, None))
    return [[M[a, b] for b in idx] for a in idx]


@dataclass(frozen=True)
class NeighborForm:
    """Neighboring SPA models of orders ``r_small < r_big`` in hat form.

    ``A_hat`` (``r_big x n``) and friends are the first two block rows of the
    finer three-way partition; ``A_hat_r`` (``r_small x n``) the first block
    row. The affine map ``h = Tx x_r + Tu u`` solves::

        [[A22, A23], [A32, A33]] h = [A21; A31] x_r + [B2; B3] u

    and is computed through the Schur complement on ``A33``, independently of
    the direct ``A22`` solve in :func:`spa_reduce`.
    """

    r_small: int
    r_big: int
    A: tuple
    B: tuple
    C: tuple
    N: tuple
    H: tuple
    A_hat: np.ndarray
    B_hat: np.ndarray
    N_hat: tuple
    H_hat: tuple
    A_hat_r: np.ndarray
    N_hat_r: tuple
    H_hat_r: tuple
    Tx: np.ndarray
    Tu: np.ndarray
    cond_block: float
    K: np.ndarray

    def h(self, x_r, u):
        """``(h1, h2)`` stacked, for column vectors or column batches."""
        return self.Tx @ x_r + self.Tu @ u

    def smaller_rom(self):
        """Reduced model of order ``r_small`` obtained by eliminating ``h``."""
        rs = self.r_small
        Zx = np.vstack([np.eye(rs), -self.Tx])   # (x_r; -h) = Zx x_r + Zu u
        Zu = np.vstack([np.zeros((rs, self.Tu.shape[1])), -self.Tu])
        C = np.hstack(self.C)
        return ReducedModel(
            r=rs,
            A=self.A_hat_r @ Zx,
            B=self.B[0] + self.A_hat_r @ Zu,
            C=C @ Zx,
            D=C @ Zu,
            E=tuple(Nr @ Zu for Nr in self.N_hat_r),
            F=tuple(Hr @ Zu for Hr in self.H_hat_r),
            H=tuple(Hr @ Zx for Hr in self.H_hat_r),
            N=tuple(Nr @ Zx for Nr in self.N_hat_r),
            K=self.K,
            cond_A22=self.cond_block,
        )

    def larger_rom(self):
        """Reduced model of order ``r_big`` with ``x_3`` eliminated through ``A33``."""
        rb = self.r_big
        m = self.B_hat.shape[1]
        A33 = self.A[2][2]
        if A33.size == 0:
            Yx, Yu = np.zeros((0, rb)), np.zeros((0, m))
        else:
            # x3 = -A33^{-1} ([A31 A32] x + B3 u)
            Yx = -np.linalg.solve(A33, np.hstack([self.A[2][0], self.A[2][1]]))
            Yu = -np.linalg.solve(A33, self.B[2])
        Zx = np.vstack([np.eye(rb), Yx])
        Zu = np.vstack([np.zeros((rb, m)), Yu])
        C = np.hstack(self.C)
        return ReducedModel(
            r=rb,
            A=self.A_hat @ Zx,
            B=self.B_hat + self.A_hat @ Zu,
            C=C @ Zx,
            D=C @ Zu,
            E=tuple(Nh @ Zu for Nh in self.N_hat),
            F=tuple(Hh @ Zu for Hh in self.H_hat),
            H=tuple(Hh @ Zx for Hh in self.H_hat),
            N=tuple(Nh @ Zx for Nh in self.N_hat),
            K=self.K,
        )


def assemble_neighbor_form(balanced, r_pair):
    """Finer partition and hat matrices for consecutive orders ``r_pair``.

    ``r_small`` must be a cut and ``r_big`` the next group boundary (which
    may be ``n``, leaving the third block empty).
    """
    r_small, r_big = (int(r) for r in r_pair)
    g = balanced.grouping
    bounds = g.boundaries()
    if r_small not in g.cuts:
        raise InadmissibleOrderError(
            f"order r={r_small} is not an admissible cut {list(g.cuts)}", cuts=g.cuts)
    nxt = bounds[bounds.index(r_small) + 1]
    if r_big != nxt:
        raise PreconditionError(
            f"orders {r_small} < {r_big} are not consecutive group boundaries "
            f"(next boundary after {r_small} is {nxt})")
    sy = balanced.system
    i, j = r_small, r_big
    A = _split3(sy.A, i, j)
    rows = (slice(0, i), slice(i, j), slice(j, None))
    B = tuple(sy.B[s] for s in rows)
    C = tuple(sy.C[:, s] for s in rows)
    N = tuple(_split3(Nk, i, j) for Nk in sy.N)
    H = tuple(_split3(Hi, i, j) for Hi in sy.H)

    # h via Schur complement on A33: S = A22 - A23 A33^{-1} A32
    A22, A23, A32, A33 = A[1][1], A[1][2], A[2][1], A[2][2]
    rhs_x = np.vstack([A[1][0], A[2][0]])
    rhs_u = np.vstack([B[1], B[2]])
    block = np.block([[A22, A23], [A32, A33]])
    cond = float(np.linalg.cond(block))
    if not np.isfinite(cond) or cond > COND_REFUSE:
        raise SingularBlockError(
            f"coupling block [[A22, A23], [A32, A33]] is singular or ill-conditioned "
            f"(cond={cond:.3e})")
    k2 = j - i

    def block_solve(R):
        R2, R3 = R[:k2], R[k2:]
        if A33.size == 0:
            return np.linalg.solve(A22, R2)
        s33 = _solver(A33, "A33")[0]
        S = A22 - A23 @ s33(A32)
        h1 = np.linalg.solve(S, R2 - A23 @ s33(R3))
        h2 = s33(R3 - A32 @ h1)
        return np.vstack([h1, h2])

    Tx = block_solve(rhs_x)
    Tu = block_solve(rhs_u)

    def top(M3, nrows):
        return np.hstack(M3[0]) if nrows == 1 else np.vstack([np.hstack(M3[0]),
                                                             np.hstack(M3[1])])

    return NeighborForm(
        r_small=i, r_big=j, A=tuple(tuple(r) for r in A), B=B, C=C,
        N=tuple(tuple(tuple(r) for r in Nk) for Nk in N),
        H=tuple(tuple(tuple(r) for r in Hi) for Hi in H),
        A_hat=top(A, 2), B_hat=np.vstack([B[0], B[1]]),
        N_hat=tuple(top(Nk, 2) for Nk in N), H_hat=tuple(top(Hi, 2) for Hi in H),
        A_hat_r=top(A, 1),
        N_hat_r=tuple(top(Nk, 1) for Nk in N), H_hat_r=tuple(top(Hi, 1) for Hi in H),
        Tx=Tx, Tu=Tu, cond_block=cond, K=sy.K.copy(),
    )


def _max_deviation(a, b):
    sa, sb = a.slots(), b.slots()
    if sa.keys() != sb.keys():
        raise PreconditionError("reduced models have different coefficient sets")
    return max((float(np.linalg.norm(sa[k] - sb[k])) for k in sa), default=0.0)


def neighbor_equivalence_check(balanced, r):
    """Largest Frobenius deviation between the neighbor-form and direct SPA models.

    Both neighboring models are compared: the order-``r`` model obtained by
    eliminating ``h`` against ``spa_reduce(balanced, r)``, and the next
    larger model (``x_3`` eliminated) against ``spa_reduce`` at that order.
    Returns ``0.0`` for ``r = n``.
    """
    n = balanced.n
    if r == n:
        return 0.0
    bounds = balanced.grouping.boundaries()
    if r not in balanced.grouping.cuts:
        raise InadmissibleOrderError(
            f"order r={r} is not an admissible cut {list(balanced.grouping.cuts)}",
            cuts=balanced.grouping.cuts)
    r_big = bounds[bounds.index(r) + 1]
    nf = assemble_neighbor_form(balanced, (r, r_big))
    dev_small = _max_deviation(nf.smaller_rom(), spa_reduce(balanced, r))
    dev_big = _max_deviation(nf.larger_rom(), spa_reduce(balanced, r_big))
    return max(dev_small, dev_big)


def spa_chain(balanced, r_final):
    """SPA models at every cut from ``r_final`` to the largest cut below ``n``.

    Ascending in order; consecutive models differ by one group of Hankel
    singular values.
    """
    cuts = balanced.grouping.cuts
    if r_final not in cuts:
        raise InadmissibleOrderError(
            f"order r={r_final} is not an admissible cut {list(cuts)}", cuts=cuts)
    return [spa_reduce(balanced, r) for r in cuts if r >= r_final]
