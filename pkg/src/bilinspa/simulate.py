"""Levy increments, Euler-Maruyama simulation and Monte-Carlo L2 errors.

Random streams
--------------
Path ``j`` of a run with seed ``s`` draws from ``Philox(key=(s, j))``, with
separate counter blocks for the Wiener part, the Poisson counts and the jump
sizes. Increments therefore depend only on ``(seed, path, step)`` and not on
how paths are chunked or spread over threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import hashlib
import logging
import math

import numpy as np

from .controls import time_grid
from .exceptions import PreconditionError, SimulationError

__all__ = [
    "JumpSpec",
    "LevyProcessSpec",
    "SimConfig",
    "TrajectoryBatch",
    "ErrorEstimate",
    "sample_increments",
    "simulate_full",
    "simulate_rom",
    "path_l2_integrals",
    "l2_output_error",
    "second_moment_ode_check",
    "increments_checksum",
]

log = logging.getLogger(__name__)

_WIENER, _POISSON, _SIZES = 0, 1, 2
JUMP_LAWS = ("two_point", "normal")


@dataclass(frozen=True)
class JumpSpec:
    """Mean-zero compound Poisson part.

    Jumps arrive at ``rate`` per unit time; each jump is ``loading @ xi``
    with ``xi`` having i.i.d. mean-zero unit-variance entries (``two_point``:
    +-1, ``normal``: standard normal). Its covariance per unit time is
    ``rate * loading @ loading.T``.
    """

    rate: float
    law: str = "two_point"
    loading: np.ndarray = None

    def __post_init__(self):
        if not self.rate >= 0:
            raise PreconditionError("jump rate must be >= 0")
        if self.law not in JUMP_LAWS:
            raise PreconditionError(f"jump law must be one of {JUMP_LAWS}")
        L = np.atleast_2d(np.asarray(self.loading, dtype=float))
        L.setflags(write=False)
        object.__setattr__(self, "loading", L)

    @property
    def covariance(self):
        return self.rate * self.loading @ self.loading.T


@dataclass(frozen=True)
class LevyProcessSpec:
    """Wiener part with covariance ``K_w`` plus an optional jump part."""

    wiener_covariance: np.ndarray
    jump: JumpSpec = None

    def __post_init__(self):
        Kw = np.atleast_2d(np.asarray(self.wiener_covariance, dtype=float))
        if Kw.size == 0:
            Kw = Kw.reshape(0, 0)
        if Kw.shape[0] != Kw.shape[1]:
            raise PreconditionError("wiener_covariance must be square")
        if Kw.size:
            if not np.allclose(Kw, Kw.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Kw).max())):
                raise PreconditionError("wiener_covariance not symmetric")
            if np.linalg.eigvalsh(Kw).min() < -1e-12 * max(1.0, np.linalg.norm(Kw, 2)):
                raise PreconditionError("wiener_covariance not PSD")
        if self.jump is not None and self.jump.loading.shape[0] != Kw.shape[0]:
            raise PreconditionError("jump loading rows must equal the noise dimension")
        Kw = (Kw + Kw.T) / 2
        Kw.setflags(write=False)
        object.__setattr__(self, "wiener_covariance", Kw)

    @property
    def v(self):
        return self.wiener_covariance.shape[0]

    @property
    def covariance(self):
        K = self.wiener_covariance.copy()
        if self.jump is not None:
            K = K + self.jump.covariance
        return K

    @classmethod
    def pure_wiener(cls, K):
        return cls(wiener_covariance=K)

    @classmethod
    def with_total_covariance(cls, K, jump=None):
        """Split ``K`` into ``K - jump covariance`` (Wiener) and ``jump``."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.size == 0:
            K = K.reshape(0, 0)
        if jump is None:
            return cls(wiener_covariance=K)
        Kw = K - jump.covariance
        if Kw.size and np.linalg.eigvalsh((Kw + Kw.T) / 2).min() < -1e-12 * max(
                1.0, np.linalg.norm(K, 2)):
            raise PreconditionError("jump covariance exceeds K")
        return cls(wiener_covariance=Kw, jump=jump)

    def describe(self):
        d = {"wiener_covariance": self.wiener_covariance.tolist(), "jump": None}
        if self.jump is not None:
            d["jump"] = {"rate": self.jump.rate, "law": self.jump.law,
                         "loading": self.jump.loading.tolist()}
        return d


def _wiener_factor(Kw):
    """``F`` with ``F F^T = Kw`` for PSD ``Kw`` (eigen-decomposition)."""
    lam, V = np.linalg.eigh(Kw)
    return V * np.sqrt(np.clip(lam, 0.0, None))


def _stream(seed, path, channel):
    bitgen = np.random.Philox(key=[int(seed) % 2**64, int(path)],
                              counter=[0, 0, 0, channel])
    return np.random.Generator(bitgen)


def _path_increments(spec, F, dt, steps, seed, path):
    v = spec.v
    dM = _stream(seed, path, _WIENER).standard_normal((steps, v)) @ (math.sqrt(dt) * F.T)
    jump = spec.jump
    if jump is not None and jump.rate > 0:
        counts = _stream(seed, path, _POISSON).poisson(jump.rate * dt, steps)
        q = jump.loading.shape[1]
        sizes = _stream(seed, path, _SIZES)
        if jump.law == "normal":
            xi = np.sqrt(counts)[:, None] * sizes.standard_normal((steps, q))
        else:
            xi = 2.0 * sizes.binomial(np.repeat(counts[:, None], q, axis=1), 0.5) \
                - counts[:, None]
        dM = dM + xi @ jump.loading.T
    return dM


def sample_increments(spec, dt, steps, n_paths, seed, *, path_offset=0, workers=1):
    """Levy increments of shape ``(n_paths, steps, v)``.

    Path ``j`` (global index ``path_offset + j``) is generated from its own
    counter-based stream, so the tensor is independent of ``workers`` and of
    chunking.
    """
    if not dt > 0 or steps < 1 or n_paths < 1:
        raise PreconditionError("need dt > 0, steps >= 1, n_paths >= 1")
    out = np.zeros((n_paths, steps, spec.v))
    if spec.v == 0:
        return out
    F = _wiener_factor(spec.wiener_covariance)

    def fill(j):
        out[j] = _path_increments(spec, F, dt, steps, seed, path_offset + j)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n_paths)))
    else:
        for j in range(n_paths):
            fill(j)
    return out


def increments_checksum(increments):
    """SHA-256 of the raw increment bytes, for coupling assertions."""
    return hashlib.sha256(np.ascontiguousarray(increments).tobytes()).hexdigest()


@dataclass(frozen=True)
class SimConfig:
    """Euler-Maruyama settings; ``dt`` defaults to ``1e-3 * T``."""

    T: float = 1.0
    dt: float = None
    n_paths: int = 1000
    seed: int = 0
    scheme: str = "euler-maruyama"
    chunk_size: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", 1e-3 * self.T)
        if self.scheme != "euler-maruyama":
            raise PreconditionError(f"unsupported scheme {self.scheme!r}")
        if self.n_paths < 1:
            raise PreconditionError("n_paths must be >= 1")
        if self.chunk_size < 1:
            raise PreconditionError("chunk_size must be >= 1")
        time_grid(self.T, self.dt)

    @property
    def grid(self):
        return time_grid(self.T, self.dt)

    @property
    def steps(self):
        return self.grid.size - 1

    def describe(self):
        return {"T": self.T, "dt": self.dt, "n_paths": self.n_paths, "seed": self.seed,
                "scheme": self.scheme}


@dataclass(frozen=True)
class TrajectoryBatch:
    """Outputs ``y`` of shape ``(paths, len(t), p)``; states optional."""

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray = None

    @property
    def n_paths(self):
        return self.y.shape[0]


def _integrate(A, C, N, H, t, u_vals, b_vals, f_vals, d_vals, increments, x0,
               store_states):
    """Euler-Maruyama for ``dx = [A x + b + sum_k u_k N_k x] dt + sum_i (H_i x + f_i) dM_i``.

    ``y = C x + d``. State-dependent terms use the pre-step state, which
    realizes the left limit ``x(t-)`` in the noise term. Since ``u`` is
    deterministic, the drift map ``I + dt (A + sum_k u_k N_k)`` of every step
    is formed once up front.
    """
    n_paths, steps, v = increments.shape
    n = A.shape[0]
    dt = t[1] - t[0]
    x = np.zeros((n_paths, n)) if x0 is None else np.tile(np.asarray(x0, float), (n_paths, 1))
    # step-major buffers keep each write contiguous
    y = np.empty((steps + 1, n_paths, C.shape[0]))
    xs = np.empty((steps + 1, n_paths, n)) if store_states else None
    Ct = C.T
    drift = np.broadcast_to(A, (steps, n, n)).copy()
    for k, Nk in enumerate(N):
        drift += u_vals[:steps, k, None, None] * Nk
    step_maps = np.eye(n) + dt * drift.transpose(0, 2, 1)
    shift = dt * b_vals[:steps]
    Hcat = np.hstack([Hi.T for Hi in H]) if v else None
    fstack = np.stack(f_vals, axis=1) if v else None     # (len(t), v, n)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps + 1):
            y[j] = x @ Ct + d_vals[j]
            if store_states:
                xs[j] = x
            if j == steps:
                break
            x_new = x @ step_maps[j] + shift[j]
            if v:
                hx = (x @ Hcat).reshape(n_paths, v, n) + fstack[j]
                x_new += np.einsum("pi,pin->pn", increments[:, j], hx)
            x = x_new
            if j % 64 == 63 and not np.all(np.isfinite(x)):
                _abort(y, t, j + 1, x)
    if not np.all(np.isfinite(y)):
        _abort(y, t, steps, x)
    y = y.transpose(1, 0, 2)
    return TrajectoryBatch(t=t, y=y, x=xs.transpose(1, 0, 2) if store_states else None)


def _abort(y, t, upto, x):
    bad_path = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    path = int(bad_path[0]) if bad_path.size else -1
    finite = np.all(np.isfinite(y[:upto + 1]), axis=2)
    rows = np.flatnonzero(~np.all(finite, axis=1))
    step = int(rows[0]) if rows.size else upto
    if path < 0:
        path = int(np.flatnonzero(~finite[step])[0])
    raise SimulationError(
        f"state left the finite range on path {path} by step {step} "
        f"(t={t[min(step, t.size - 1)]:.6g}); aborting rather than censoring")


def _check_increments(increments, sim, v):
    if increments.ndim != 3 or increments.shape[1] != sim.steps or increments.shape[2] != v:
        raise PreconditionError(
            f"increments shape {increments.shape} does not match "
            f"(paths, {sim.steps}, {v})")


def simulate_full(system, u, increments, sim, x0=None, *, store_states=False):
    """Simulate the full bilinear system on the grid of ``sim``."""
    _check_increments(increments, sim, system.v)
    t = sim.grid
    u_vals = u(t) if system.m else np.zeros((t.size, 0))
    b_vals = u_vals @ system.B.T
    zeros_n = np.zeros((t.size, system.n))
    d_vals = np.zeros((t.size, system.p))
    return _integrate(system.A, system.C, system.N, system.H, t, u_vals, b_vals,
                      [zeros_n] * system.v, d_vals, increments, x0, store_states)


def simulate_rom(rom, u, increments, sim, x0=None, *, store_states=False):
    """Simulate a reduced model; control-quadratic and noise-feedthrough terms included."""
    _check_increments(increments, sim, rom.v)
    t = sim.grid
    u_vals = u(t) if rom.m else np.zeros((t.size, 0))
    b_vals = u_vals @ rom.B.T
    for k, Ek in enumerate(rom.E):
        b_vals = b_vals + u_vals[:, k:k + 1] * (u_vals @ Ek.T)
    f_vals = [u_vals @ Fi.T for Fi in rom.F]
    d_vals = u_vals @ rom.D.T
    return _integrate(rom.A, rom.C, rom.N, rom.H, t, u_vals, b_vals, f_vals, d_vals,
                      increments, x0, store_states)


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte-Carlo estimate of ``E ||y - y_r||^2_{L2(0,T)}``."""

    mc_mean_sq: float
    std_error: float
    root: float
    n_paths: int

    @classmethod
    def from_path_integrals(cls, values):
        values = np.asarray(values, dtype=float)
        n = values.size
        if n == 0:
            raise PreconditionError("no paths")
        mean = math.fsum(values) / n
        if n > 1:
            var = math.fsum((values - mean) ** 2) / (n - 1)
            se = math.sqrt(var / n)
        else:
            se = math.inf
        mean = max(mean, 0.0)
        return cls(mc_mean_sq=mean, std_error=se, root=math.sqrt(mean), n_paths=n)

    @property
    def root_std_error(self):
        """Delta-method standard error of ``root``."""
        if self.root == 0.0:
            return 0.0 if self.std_error == 0.0 else math.inf
        return self.std_error / (2.0 * self.root)

    def describe(self):
        return {"mc_mean_sq": self.mc_mean_sq, "std_error": self.std_error,
                "root": self.root, "root_std_error": self.root_std_error,
                "n_paths": self.n_paths}


def path_l2_integrals(t, y, y_r):
    """Per-path trapezoid integrals of ``||y - y_r||^2`` over the grid ``t``."""
    diff = np.sum((y - y_r) ** 2, axis=2)
    return np.trapezoid(diff, t, axis=1)


def l2_output_error(y, y_r):
    """Monte-Carlo L2 output error between two coupled trajectory batches."""
    if y.t.shape != y_r.t.shape or not np.array_equal(y.t, y_r.t):
        raise PreconditionError("time grids differ")
    if y.y.shape != y_r.y.shape:
        raise PreconditionError(f"output shapes differ: {y.y.shape} vs {y_r.y.shape}")
    return ErrorEstimate.from_path_integrals(path_l2_integrals(y.t, y.y, y_r.y))


def _moment_rhs(system, Pi):
    out = system.A @ Pi + Pi @ system.A.T
    for i, Hi in enumerate(system.H):
        for j, Hj in enumerate(system.H):
            out = out + system.K[i, j] * (Hi @ Pi @ Hj.T)
    return out


def second_moment_ode_check(system, x0, T, dt, *, n_paths=10_000, seed=0, abs_tol=1e-4,
                            levy=None, chunk_size=1000):
    """Compare ``trace Pi(t)`` of the second-moment ODE against Monte Carlo.

    ``Pi' = A Pi + Pi A^T + sum_ij k_ij H_i Pi H_j^T`` with ``Pi(0) = x0 x0^T``
    is integrated by RK4 on the simulation grid; ``E[x^T x]`` is estimated by
    ``n_paths`` Euler-Maruyama paths with ``u = 0``.

    Returns
    -------
    float
        ``max_t |trace Pi(t) - mean| / (3 * std_error(t) + abs_tol)``.
    """
    sim = SimConfig(T=T, dt=dt, n_paths=n_paths, seed=seed, chunk_size=chunk_size)
    t = sim.grid
    x0 = np.asarray(x0, dtype=float).ravel()
    Pi = np.outer(x0, x0)
    tr = np.empty(t.size)
    tr[0] = np.trace(Pi)
    h = sim.dt
    for j in range(sim.steps):
        k1 = _moment_rhs(system, Pi)
        k2 = _moment_rhs(system, Pi + 0.5 * h * k1)
        k3 = _moment_rhs(system, Pi + 0.5 * h * k2)
        k4 = _moment_rhs(system, Pi + h * k3)
        Pi = Pi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tr[j + 1] = np.trace(Pi)

    spec = levy or LevyProcessSpec.pure_wiener(system.K)
    free = system.replace(B=np.zeros((system.n, 0)), N=(), C=np.eye(system.n))
    sq = []
    for start in range(0, n_paths, chunk_size):
        count = min(chunk_size, n_paths - start)
        inc = sample_increments(spec, sim.dt, sim.steps, count, seed, path_offset=start)
        batch = simulate_full(free, None, inc, sim, x0)
        sq.append(np.sum(batch.y ** 2, axis=2))
    sq = np.concatenate(sq, axis=0)
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.full(t.size, np.inf)
    return float(np.max(np.abs(tr - mean) / (3 * se + abs_tol)))

