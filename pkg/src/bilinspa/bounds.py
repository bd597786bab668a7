"""Output error bound for SPA and its Monte-Carlo verification.

For a reduced model of order ``r`` the bound reads::

    (E ||y - y_r||^2_{L2(0,T)})^{1/2}
        <= 2 (s_1 + ... + s_nu) ||u||_{L2(0,T)} exp(0.5 ||u0||^2_{L2(0,T)})

where ``s_i`` are the distinct truncated Hankel singular values (each counted
once) and ``u0`` is ``u`` with the components ``u_k`` zeroed whenever
``N_k = 0``. It is the sum of one term per removed group, each bounding the
error between two neighboring reduced models.
"""

from dataclasses import dataclass, field
import datetime
import json
import logging
import math

import numpy as np

from .balancing import DEFAULT_GROUP_TOL, DEFAULT_SIGMA_FLOOR, balance
from .controls import control_l2_norm
from .exceptions import InstabilityError, PreconditionError
from .gramians import DEFAULT_MAX_DIM, compute_gramians
from .reduction import spa_reduce
from .simulate import (ErrorEstimate, LevyProcessSpec, SimConfig, path_l2_integrals,
                       sample_increments, simulate_full, simulate_rom)
from .system import is_mean_square_stable, validate

__all__ = [
    "PASS", "FAIL", "INCONCLUSIVE",
    "u0_mask",
    "error_bound",
    "verdict",
    "StepResult",
    "BoundReport",
    "verify_bound",
]

log = logging.getLogger(__name__)

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
DEFAULT_ZERO_TOL = 1e-14
MERGE_FLAG_RADIUS = 1e-10
# relative root standard error above which a miss is reported as inconclusive
INCONCLUSIVE_REL_SE = 0.25
ROUNDOFF_RTOL = 1e-8


def u0_mask(system, zero_tol=DEFAULT_ZERO_TOL):
    """``mask[k]`` is True iff ``||N_k||_F > zero_tol * ||A||_F``."""
    a = np.linalg.norm(system.A)
    return np.array([np.linalg.norm(Nk) > zero_tol * a for Nk in system.N], dtype=bool)


def error_bound(sigma_groups, u_norm, u0_norm):
    """Per-step and total bounds for the distinct truncated values ``sigma_groups``.

    Returns
    -------
    total : float
        ``math.fsum`` of the per-step bounds.
    per_step : ndarray
        ``2 * s_i * u_norm * exp(0.5 * u0_norm**2)``.

    Examples
    --------
    >>> total, steps = error_bound([0.5, 0.1], 2.0, 1.0)
    >>> round(total, 5)
    3.95693
    """
    if u_norm < 0 or u0_norm < 0:
        raise PreconditionError("norms must be >= 0")
    s = np.asarray(sigma_groups, dtype=float).ravel()
    per_step = 2.0 * s * u_norm * math.exp(0.5 * u0_norm ** 2)
    return math.fsum(per_step), per_step


def verdict(estimate, bound, atol=0.0):
    """One-sided 3-sigma comparison of the Monte-Carlo root against ``bound``.

    PASS if ``root - 3 se_root <= bound + atol`` (``se_root`` by the delta
    method); INCONCLUSIVE with fewer than two paths, or when the bound is
    missed but ``se_root`` exceeds a quarter of ``root``; FAIL otherwise.
    ``atol`` absorbs round-off where the bound is zero.
    """
    if estimate.n_paths < 2:
        return INCONCLUSIVE
    se_root = estimate.root_std_error
    if estimate.root - 3.0 * se_root <= bound + atol:
        return PASS
    if se_root > INCONCLUSIVE_REL_SE * estimate.root:
        return INCONCLUSIVE
    return FAIL


def _combine(verdicts):
    if FAIL in verdicts:
        return FAIL
    if INCONCLUSIVE in verdicts:
        return INCONCLUSIVE
    return PASS


@dataclass(frozen=True)
class StepResult:
    """Error between the models of orders ``order_from`` (larger) and ``order_to``."""

    order_from: int
    order_to: int
    removed_value: float
    multiplicity: int
    bound: float
    estimate: ErrorEstimate
    verdict: str

    def describe(self):
        return {
            "order_from": self.order_from, "order_to": self.order_to,
            "removed_value": self.removed_value, "multiplicity": self.multiplicity,
            "bound": self.bound, "mc_estimate": self.estimate.describe(),
            "slack": self.bound - self.estimate.root, "verdict": self.verdict,
        }


@dataclass(frozen=True)
class BoundReport:
    """Outcome of :func:`verify_bound`.

    ``orders`` holds, for every admissible order ``r' >= r``, the bound and
    estimate of the full-versus-reduced error; the entry for ``r`` itself is
    mirrored in ``total_bound`` and ``mc_estimate``.
    """

    r: int
    n: int
    sigma: np.ndarray
    group_values: np.ndarray
    group_multiplicities: tuple
    truncated_values: np.ndarray
    truncated_multiplicities: tuple
    merge_radius: float
    u_norm: float
    u0_norm: float
    u0_mask: np.ndarray
    exp_factor: float
    total_bound: float
    per_step: tuple
    mc_estimate: ErrorEstimate
    total_verdict: str
    verdict: str
    orders: tuple = ()
    inputs: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def per_step_bounds(self):
        return np.array([s.bound for s in self.per_step])

    def to_dict(self, timestamp=None):
        d = {
            "inputs": self.inputs,
            "n": self.n,
            "r": self.r,
            "hsv": self.sigma.tolist(),
            "grouping": {
                "values": self.group_values.tolist(),
                "multiplicities": list(self.group_multiplicities),
                "merge_radius": self.merge_radius,
                "merge_flagged": self.merge_radius > MERGE_FLAG_RADIUS,
            },
            "truncated_values": self.truncated_values.tolist(),
            "truncated_multiplicities": list(self.truncated_multiplicities),
            "u_norm": self.u_norm,
            "u0_norm": self.u0_norm,
            "u0_mask": self.u0_mask.tolist(),
            "exp_factor": self.exp_factor,
            "total_bound": self.total_bound,
            "mc_estimate": self.mc_estimate.describe(),
            "slack": self.total_bound - self.mc_estimate.root,
            "total_verdict": self.total_verdict,
            "per_step": [s.describe() for s in self.per_step],
            "orders": list(self.orders),
            "diagnostics": self.diagnostics,
            "verdict": self.verdict,
        }
        if timestamp is not None:
            d["timestamp"] = timestamp
        return d

    def to_json(self, timestamp=False):
        """Deterministic JSON; ``timestamp=True`` adds the current UTC time."""
        ts = None
        if timestamp:
            ts = datetime.datetime.now(datetime.timezone.utc).isoformat()
        return json.dumps(self.to_dict(ts), indent=2, sort_keys=True, allow_nan=True)

    def per_step_csv(self):
        rows = ["order_from,order_to,removed_value,multiplicity,bound,mc_root,"
                "mc_root_std_error,verdict"]
        for s in self.per_step:
            rows.append(f"{s.order_from},{s.order_to},{s.removed_value!r},{s.multiplicity},"
                        f"{s.bound!r},{s.estimate.root!r},{s.estimate.root_std_error!r},"
                        f"{s.verdict}")
        return "\n".join(rows) + "\n"


def verify_bound(system, r, control, levy_spec=None, sim=None, *, newton_tol=1e-10,
                 max_iters=50, max_dim=DEFAULT_MAX_DIM, group_tol=DEFAULT_GROUP_TOL,
                 sigma_floor=DEFAULT_SIGMA_FLOOR, zero_tol=DEFAULT_ZERO_TOL,
                 stability_tol=1e-9):
    """Gramians, balancing, SPA and a coupled Monte-Carlo check of the bound.

    The full system and every reduced model of order ``>= r`` on the SPA
    chain are driven by the same increments. Per-path errors are
    accumulated chunk by chunk in path order, so the report is deterministic.

    Parameters
    ----------
    system : BilinearStochasticSystem
    r : int
        Reduced order; ``n`` or a cut of the Hankel singular value grouping.
    control : ControlSignal
    levy_spec : LevyProcessSpec, optional
        Defaults to pure Wiener noise with covariance ``system.K``. Its total
        covariance must equal ``system.K``.
    sim : SimConfig

    Returns
    -------
    BoundReport
    """
    sim = sim or SimConfig()
    rep = validate(system)
    if not rep.ok:
        raise PreconditionError("invalid system: " + "; ".join(rep.violations))
    stab = is_mean_square_stable(system, stability_tol)
    if not stab.stable:
        raise InstabilityError(
            f"system is not mean-square stable (abscissa {stab.spectral_abscissa:.6g})")
    if control.m != system.m:
        raise PreconditionError(f"control has {control.m} inputs, system has {system.m}")
    levy_spec = levy_spec or LevyProcessSpec.pure_wiener(system.K)
    if levy_spec.v != system.v or not np.allclose(levy_spec.covariance, system.K,
                                                  rtol=1e-12, atol=1e-14):
        raise PreconditionError("Levy covariance differs from the system's K")

    gram = compute_gramians(system, newton_tol=newton_tol, max_iters=max_iters,
                            max_dim=max_dim)
    bal = balance(system, gram.P, gram.Q, sigma_floor=sigma_floor, group_tol=group_tol)
    grouping = bal.grouping
    n = system.n
    trunc_vals, trunc_mult = grouping.truncated(r)

    mask = u0_mask(system, zero_tol)
    u_norm = control_l2_norm(control, sim.T, sim.dt)
    u0_norm = control_l2_norm(control.masked(mask), sim.T, sim.dt) if system.m else 0.0
    exp_factor = math.exp(0.5 * u0_norm ** 2)

    # chain of orders r = r_1 < ... < r_k < n, then the full model
    orders = [c for c in grouping.cuts if c >= r] if r < n else []
    roms = [spa_reduce(bal, c) for c in orders]
    bounds_chain = grouping.boundaries()

    t = sim.grid
    full_vs = {c: [] for c in orders}          # full model vs ROM of order c
    steps = {c: [] for c in orders}            # ROM(c) vs next larger model
    ident, scale = [], []                      # only for r = n
    for start in range(0, sim.n_paths, sim.chunk_size):
        count = min(sim.chunk_size, sim.n_paths - start)
        inc = sample_increments(levy_spec, sim.dt, sim.steps, count, sim.seed,
                                path_offset=start, workers=sim.workers)
        y_full = simulate_full(system, control, inc, sim).y
        if r == n:
            y_bal = simulate_rom(spa_reduce(bal, n), control, inc, sim).y
            ident.append(path_l2_integrals(t, y_full, y_bal))
            scale.append(path_l2_integrals(t, y_full, 0.0))
            continue
        ys = [simulate_rom(rom, control, inc, sim).y for rom in roms]
        for idx, c in enumerate(orders):
            full_vs[c].append(path_l2_integrals(t, y_full, ys[idx]))
            y_next = ys[idx + 1] if idx + 1 < len(ys) else y_full
            steps[c].append(path_l2_integrals(t, y_next, ys[idx]))

    per_step = []
    order_rows = []
    if r == n:
        # nothing truncated: the error is round-off in the change of coordinates
        est = ErrorEstimate.from_path_integrals(np.concatenate(ident))
        y_size = ErrorEstimate.from_path_integrals(np.concatenate(scale)).root
        total, total_verdict = 0.0, verdict(est, 0.0, atol=ROUNDOFF_RTOL * y_size)
    else:
        for idx, c in enumerate(orders):
            k = bounds_chain.index(c) + 1
            value, mult = float(grouping.values[k]), int(grouping.multiplicities[k])
            _, (b,) = error_bound([value], u_norm, u0_norm)
            e = ErrorEstimate.from_path_integrals(np.concatenate(steps[c]))
            nxt = orders[idx + 1] if idx + 1 < len(orders) else n
            per_step.append(StepResult(order_from=nxt, order_to=c, removed_value=value,
                                       multiplicity=mult, bound=float(b), estimate=e,
                                       verdict=verdict(e, float(b))))
        for c in orders:
            vals, _ = grouping.truncated(c)
            tb, _ = error_bound(vals, u_norm, u0_norm)
            e = ErrorEstimate.from_path_integrals(np.concatenate(full_vs[c]))
            order_rows.append({"order": c, "total_bound": tb, "mc_estimate": e.describe(),
                               "verdict": verdict(e, tb)})
        total = math.fsum(s.bound for s in per_step)
        est = ErrorEstimate.from_path_integrals(np.concatenate(full_vs[r]))
        total_verdict = verdict(est, total)

    all_verdicts = [total_verdict] + [s.verdict for s in per_step] + \
        [row["verdict"] for row in order_rows]
    diagnostics = dict(gram.diagnostics())
    diagnostics.update({
        "spectral_abscissa": stab.spectral_abscissa,
        "cond_A22": {str(rom.r): rom.cond_A22 for rom in roms},
    })
    inputs = {
        "dimensions": {"n": n, "m": system.m, "p": system.p, "v": system.v},
        "r": r,
        "control": control.describe(),
        "levy": levy_spec.describe(),
        "sim": sim.describe(),
        "tolerances": {"newton_tol": newton_tol, "group_tol": group_tol,
                       "sigma_floor": sigma_floor, "zero_tol": zero_tol,
                       "stability_tol": stability_tol},
    }
    return BoundReport(
        r=r, n=n, sigma=bal.sigma, group_values=grouping.values,
        group_multiplicities=grouping.multiplicities,
        truncated_values=np.asarray(trunc_vals), truncated_multiplicities=tuple(trunc_mult),
        merge_radius=grouping.merge_radius, u_norm=u_norm, u0_norm=u0_norm, u0_mask=mask,
        exp_factor=exp_factor, total_bound=total, per_step=tuple(per_step),
        mc_estimate=est, total_verdict=total_verdict, verdict=_combine(all_verdicts),
        orders=tuple(order_rows), inputs=inputs, diagnostics=diagnostics,
    )
