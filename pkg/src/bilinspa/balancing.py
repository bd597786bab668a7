"""Balancing transformation, Hankel singular values and block partitions."""

from dataclasses import dataclass
import logging

import numpy as np

from .exceptions import InadmissibleOrderError, NotPositiveDefiniteError, PreconditionError
from .system import BilinearStochasticSystem

__all__ = [
    "BalancedRealization",
    "HsvGrouping",
    "PartitionedSystem",
    "balance",
    "group_hsvs",
    "partition",
]

log = logging.getLogger(__name__)

DEFAULT_GROUP_TOL = 1e-8
DEFAULT_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class HsvGrouping:
    """Hankel singular values merged into groups of (near-)ties.

    Attributes
    ----------
    values : ndarray
        Distinct values (group means), descending.
    multiplicities : tuple of int
    cuts : tuple of int
        Admissible reduction orders: cumulative group sizes strictly below
        ``n``.
    merge_radius : float
        Largest spread ``max - min`` inside any group, relative to
        ``sigma[0]``.
    """

    values: np.ndarray
    multiplicities: tuple
    cuts: tuple
    merge_radius: float = 0.0

    @property
    def n(self):
        return int(sum(self.multiplicities))

    def boundaries(self):
        """All group end indices including ``n``."""
        return tuple(np.cumsum(self.multiplicities).tolist())

    def truncated(self, r):
        """Distinct values and multiplicities of the groups beyond order ``r``."""
        if r == self.n:
            return np.zeros(0), ()
        if r not in self.cuts:
            raise InadmissibleOrderError(
                f"order r={r} splits a group of repeated Hankel singular values; "
                f"admissible orders: {list(self.cuts)}", cuts=self.cuts)
        k = self.boundaries().index(r) + 1
        return self.values[k:], self.multiplicities[k:]


def group_hsvs(sigma, rel_tol=DEFAULT_GROUP_TOL):
    """Group adjacent Hankel singular values closer than ``rel_tol * sigma[0]``.

    Examples
    --------
    >>> g = group_hsvs([3, 1, 1, 0.2], rel_tol=1e-9)
    >>> g.multiplicities, g.cuts
    ((1, 2, 1), (1, 3))
    """
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size == 0:
        raise PreconditionError("sigma is empty")
    if np.any(np.diff(sigma) > 0) or sigma[-1] <= 0:
        raise PreconditionError("sigma must be positive and non-increasing")
    tol = rel_tol * sigma[0]
    groups = [[sigma[0]]]
    for s_prev, s in zip(sigma[:-1], sigma[1:]):
        if s_prev - s <= tol:
            groups[-1].append(s)
        else:
            groups.append([s])
    values = np.array([float(np.mean(g)) for g in groups])
    mult = tuple(len(g) for g in groups)
    cuts = tuple(int(c) for c in np.cumsum(mult)[:-1])
    radius = max((g[0] - g[-1]) for g in groups) / sigma[0]
    return HsvGrouping(values=values, multiplicities=mult, cuts=cuts,
                       merge_radius=float(radius))


@dataclass(frozen=True)
class BalancedRealization:
    """Balanced system with ``S P S^T = S^{-T} Q S^{-1} = diag(sigma)``."""

    system: BilinearStochasticSystem
    sigma: np.ndarray
    S: np.ndarray
    S_inv: np.ndarray
    grouping: HsvGrouping

    @property
    def n(self):
        return self.system.n


def _cholesky(M, name):
    M = (M + M.T) / 2
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(M) / M.shape[0]
    log.warning("%s: Cholesky failed, retrying with jitter %.3e", name, jitter)
    try:
        return np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc


def balance(system, P, Q, *, sigma_floor=DEFAULT_SIGMA_FLOOR, group_tol=DEFAULT_GROUP_TOL):
    """Balance ``system`` with respect to the Gramians ``P`` and ``Q``.

    With ``P = L_P L_P^T``, ``Q = L_Q L_Q^T`` and the SVD
    ``L_Q^T L_P = U diag(sigma) V^T``::

        S     = diag(sigma)^{-1/2} U^T L_Q^T
        S^{-1} = L_P V diag(sigma)^{-1/2}

    Each singular pair is signed so that the first nonzero entry of the
    left vector is positive, which makes ``S`` deterministic.

    Raises
    ------
    NotPositiveDefiniteError
        ``P`` or ``Q`` is not positive definite (one jittered retry).
    PreconditionError
        ``sigma[i] < sigma_floor * sigma[0]``; the realization is
        numerically non-minimal.
    """
    n = system.n
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != (n, n) or Q.shape != (n, n):
        raise PreconditionError(f"Gramians must be {n}x{n}")
    LP = _cholesky(P, "P")
    LQ = _cholesky(Q, "Q")
    U, sigma, Vt = np.linalg.svd(LQ.T @ LP)
    small = np.flatnonzero(sigma < sigma_floor * sigma[0])
    if small.size:
        i = int(small[0])
        raise PreconditionError(
            f"Hankel singular value sigma[{i}]={sigma[i]:.3e} is below "
            f"{sigma_floor:g}*sigma[0]; realization is numerically non-minimal")
    for k in range(n):
        nz = np.flatnonzero(np.abs(U[:, k]) > 0)
        if nz.size and U[nz[0], k] < 0:
            U[:, k] *= -1
            Vt[k, :] *= -1
    d = 1.0 / np.sqrt(sigma)
    S = d[:, None] * (U.T @ LQ.T)
    S_inv = (LP @ Vt.T) * d[None, :]
    return BalancedRealization(
        system=system.transformed(S, S_inv),
        sigma=sigma,
        S=S,
        S_inv=S_inv,
        grouping=group_hsvs(sigma, group_tol),
    )


@dataclass(frozen=True)
class PartitionedSystem:
    """Balanced coefficients split after the first ``r`` states.

    ``N`` and ``H`` hold, per matrix, the tuple ``(X11, X12, X21, X22)``.
    """

    r: int
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    N: tuple
    H: tuple
    Sigma1: np.ndarray
    Sigma2: np.ndarray


def _split(M, r):
    return M[:r, :r], M[:r, r:], M[r:, :r], M[r:, r:]


def partition(balanced, r):
    """Block partition of a balanced realization at order ``r``.

    ``r`` must satisfy ``1 <= r < n`` and be a cut of the HSV grouping.
    """
    n = balanced.n
    if not 1 <= r < n:
        raise PreconditionError(f"order r={r} out of range [1, {n - 1}]")
    if r not in balanced.grouping.cuts:
        raise InadmissibleOrderError(
            f"order r={r} splits a group of repeated Hankel singular values; "
            f"admissible orders: {list(balanced.grouping.cuts)}",
            cuts=balanced.grouping.cuts)
    sy = balanced.system
    A11, A12, A21, A22 = _split(sy.A, r)
    return PartitionedSystem(
        r=r, A11=A11, A12=A12, A21=A21, A22=A22,
        B1=sy.B[:r], B2=sy.B[r:], C1=sy.C[:, :r], C2=sy.C[:, r:],
        N=tuple(_split(Nk, r) for Nk in sy.N),
        H=tuple(_split(Hi, r) for Hi in sy.H),
        Sigma1=np.diag(balanced.sigma[:r]),
        Sigma2=np.diag(balanced.sigma[r:]),
    )
