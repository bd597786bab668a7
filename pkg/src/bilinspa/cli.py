"""Command-line interface.

Exit codes
----------
0  success / PASS
1  other failure (solver non-convergence, singular blocks, ...)
2  I/O or parse error
3  invalid or mean-square unstable system
4  reduction order splits a group of repeated Hankel singular values
5  state dimension above the dense solver cap
6  bound verification FAIL
7  bound verification INCONCLUSIVE

Only the report path (or report JSON) goes to stdout; diagnostics go to
stderr.
"""

import argparse
import datetime
import functools
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .balancing import balance
from .bounds import FAIL, INCONCLUSIVE, PASS, verify_bound
from .controls import ControlSignal, parse_control_spec
from .exceptions import (BilinspaError, DimensionCapError, DimensionError,
                         InadmissibleOrderError, InstabilityError, ManifestError,
                         PreconditionError)
from .gramians import compute_gramians, riccati_solvable
from .io import load_control, load_system, save_rom, save_system, write_matrix
from .reduction import spa_reduce
from .simulate import JumpSpec, LevyProcessSpec, SimConfig
from .system import generate_test_system, is_mean_square_stable, validate

log = logging.getLogger("bilinspa")

EXIT_OK, EXIT_OTHER, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3
EXIT_ORDER, EXIT_CAP, EXIT_FAIL, EXIT_INCONCLUSIVE = 4, 5, 6, 7

DEFAULTS = {
    "manifest": None,
    "order": None,
    "outdir": None,
    "paths": 10_000,
    "dt": None,
    "horizon": 1.0,
    "seed": 0,
    "control": None,
    "jump": None,
    "tol_stability": 1e-9,
    "tol_newton": 1e-10,
    "tol_group": 1e-8,
    "tol_sigma_floor": 1e-12,
    "tol_zero": 1e-14,
    "max_iters": 50,
    "max_dim": 100,
    "chunk_size": 1000,
    "workers": 1,
    "no_timestamp": False,
    "dump_gramians": False,
    "n": 6,
    "m": 2,
    "p": 1,
    "v": 1,
    "margin": 0.1,
    "linear": False,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _add_common(p, *names):
    spec = {
        "manifest": (("--manifest",), dict(help="system manifest JSON")),
        "order": (("--order", "-r"), dict(type=int, help="reduced order r")),
        "outdir": (("--outdir",), dict(help="output directory")),
        "paths": (("--paths",), dict(type=int, help="Monte-Carlo paths (default 10000)")),
        "dt": (("--dt",), dict(type=float, help="time step (default 1e-3 * horizon)")),
        "horizon": (("--horizon",), dict(type=float, help="time horizon T (default 1)")),
        "seed": (("--seed",), dict(type=int, help="random seed (default 0)")),
        "control": (("--control",), dict(
            help="control spec: zero | constant:a1,a2 | sinusoid:a1,a2@freq")),
        "jump": (("--jump",), dict(
            help="compound Poisson part RATE:LAW:SCALE, LAW in two_point|normal")),
    }
    for name in names:
        flags, kw = spec[name]
        p.add_argument(*flags, dest=name, default=None, **kw)


def _add_tolerances(p):
    g = p.add_argument_group("tolerances")
    g.add_argument("--tol-stability", type=float, default=None,
                   help="stability iff abscissa < -tol (default 1e-9)")
    g.add_argument("--tol-newton", type=float, default=None,
                   help="Riccati Newton tolerance (default 1e-10)")
    g.add_argument("--tol-group", type=float, default=None,
                   help="relative HSV grouping tolerance (default 1e-8)")
    g.add_argument("--tol-sigma-floor", type=float, default=None,
                   help="smallest admissible sigma_n / sigma_1 (default 1e-12)")
    g.add_argument("--tol-zero", type=float, default=None,
                   help="relative threshold for N_k = 0 (default 1e-14)")
    g.add_argument("--max-iters", type=int, default=None, help="Newton iterations (50)")
    g.add_argument("--max-dim", type=int, default=None,
                   help="dense Kronecker solver cap on n (default 100)")


def _add_global(p, default):
    # accepted before or after the subcommand; SUPPRESS keeps the sub-level
    # copies from overwriting values given at the top level
    p.add_argument("--config", default=default,
                   help="JSON file with flag values; flags override it")
    p.add_argument("--no-timestamp", action="store_true", default=default,
                   help="omit timestamps so reports are byte-reproducible")
    p.add_argument("-v", "--verbose", action="count", default=default)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bilinspa",
        description="Balanced SPA model reduction for stochastic bilinear systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global(parser, None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check invariants and mean-square stability")
    _add_global(p, argparse.SUPPRESS)
    _add_common(p, "manifest")
    _add_tolerances(p)

    p = sub.add_parser("reduce", help="Gramians, balancing and SPA reduced model")
    _add_global(p, argparse.SUPPRESS)
    _add_common(p, "manifest", "order", "outdir")
    _add_tolerances(p)
    p.add_argument("--dump-gramians", action="store_true", default=None,
                   help="also write P, Q, X, S and S_inv as Matrix Market")

    p = sub.add_parser("verify-bound", help="Monte-Carlo check of the SPA error bound")
    _add_global(p, argparse.SUPPRESS)
    _add_common(p, "manifest", "order", "outdir", "paths", "dt", "horizon", "seed",
                "control", "jump")
    _add_tolerances(p)
    p.add_argument("--chunk-size", type=int, default=None, help="paths per chunk (1000)")
    p.add_argument("--workers", type=int, default=None,
                   help="threads for noise sampling; results do not depend on it")

    p = sub.add_parser("demo", help="write a generated stable system and a run config")
    _add_global(p, argparse.SUPPRESS)
    _add_common(p, "outdir", "seed")
    for dim in ("n", "m", "p", "v"):
        p.add_argument(f"--{dim}", type=int, default=None, help=f"dimension {dim}")
    p.add_argument("--margin", type=float, default=None, help="stability margin (0.1)")
    p.add_argument("--linear", action="store_true", default=None,
                   help="set all N_k = 0 (bound without exponential factor)")
    return parser


def resolve_config(args):
    """Merge defaults, the optional ``--config`` file and explicit flags."""
    values = dict(DEFAULTS)
    if args.config:
        if not os.path.exists(args.config):
            raise CliError(f"file not found: {args.config}", EXIT_IO)
        with open(args.config, encoding="utf-8") as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"{args.config}: invalid JSON at line {exc.lineno}: "
                               f"{exc.msg}", EXIT_IO) from exc
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise CliError(f"{args.config}: unknown keys {sorted(unknown)}", EXIT_IO)
        base = os.path.dirname(os.path.abspath(args.config))
        for key in ("manifest", "outdir"):
            if cfg.get(key) and not os.path.isabs(cfg[key]):
                cfg[key] = os.path.join(base, cfg[key])
        values.update(cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    for key in ("tol_stability", "tol_newton", "tol_group", "tol_sigma_floor", "tol_zero"):
        if not values[key] > 0 and not (key == "tol_stability" and values[key] == 0):
            raise CliError(f"{key.replace('_', '-')} must be positive", EXIT_INVALID)
    return argparse.Namespace(**values)


def _timestamp(cfg):
    if cfg.no_timestamp:
        return None
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg, *keys):
    for key in keys:
        if getattr(cfg, key) is None:
            raise CliError(f"--{key} is required", EXIT_INVALID)


def _load(cfg):
    system = load_system(cfg.manifest)
    report = validate(system)
    if not report.ok:
        raise CliError("invalid system: " + "; ".join(report.violations), EXIT_INVALID)
    return system


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except BilinspaError as exc:
        exc.args = (f"{name}: {exc}",) + exc.args[1:]
        raise


def cmd_validate(cfg):
    _require(cfg, "manifest")
    system = load_system(cfg.manifest)
    report = validate(system)
    out = {"manifest": cfg.manifest, "valid": report.ok, "violations": list(report.violations)}
    code = EXIT_OK
    if report.ok:
        stab = is_mean_square_stable(system, cfg.tol_stability)
        out.update({"spectral_abscissa": stab.spectral_abscissa, "stable": stab.stable,
                    "margin": stab.margin, "tol": stab.tol})
        if not stab.stable:
            print(f"unstable: spectral abscissa {stab.spectral_abscissa:.6g}",
                  file=sys.stderr)
            code = EXIT_INVALID
    else:
        for v in report.violations:
            print(f"invalid: {v}", file=sys.stderr)
        code = EXIT_INVALID
    ts = _timestamp(cfg)
    if ts:
        out["timestamp"] = ts
    print(json.dumps(out, indent=2, sort_keys=True))
    return code


def _check_stable(system, cfg):
    stab = is_mean_square_stable(system, cfg.tol_stability)
    if not stab.stable:
        raise InstabilityError(
            f"system is not mean-square stable (abscissa {stab.spectral_abscissa:.6g})")
    return stab


def cmd_reduce(cfg):
    _require(cfg, "manifest", "order", "outdir")
    system = _load(cfg)
    if system.n > cfg.max_dim:
        raise DimensionCapError(f"dimension exceeds solver cap: n={system.n} > {cfg.max_dim}")
    stab = _stage("stability", _check_stable, system, cfg)
    gram = _stage("gramians", compute_gramians, system, newton_tol=cfg.tol_newton,
                  max_iters=cfg.max_iters, max_dim=cfg.max_dim)
    bal = _stage("balancing", balance, system, gram.P, gram.Q,
                 sigma_floor=cfg.tol_sigma_floor, group_tol=cfg.tol_group)
    rom = _stage("reduction", spa_reduce, bal, cfg.order)
    os.makedirs(cfg.outdir, exist_ok=True)
    rom_path = save_rom(rom, cfg.outdir)
    with open(os.path.join(cfg.outdir, "sigma.csv"), "w", encoding="utf-8") as fh:
        for s in bal.sigma:
            fh.write(f"{float(s)!r}\n")
    if cfg.dump_gramians:
        for name, M in (("P", gram.P), ("Q", gram.Q), ("X", gram.X), ("S", bal.S),
                        ("S_inv", bal.S_inv)):
            write_matrix(os.path.join(cfg.outdir, f"{name}.mtx"), M)
    diag = {
        "manifest": os.path.abspath(cfg.manifest),
        "rom_manifest": os.path.basename(rom_path),
        "order": rom.r,
        "n": system.n,
        "hsv": bal.sigma.tolist(),
        "grouping": {"values": bal.grouping.values.tolist(),
                     "multiplicities": list(bal.grouping.multiplicities),
                     "cuts": list(bal.grouping.cuts),
                     "merge_radius": bal.grouping.merge_radius},
        "gramians": gram.diagnostics(),
        "spectral_abscissa": stab.spectral_abscissa,
        "cond_A22": rom.cond_A22,
        "cond_S": float(np.linalg.cond(bal.S)),
        "tolerances": {"newton_tol": cfg.tol_newton, "group_tol": cfg.tol_group,
                       "sigma_floor": cfg.tol_sigma_floor},
    }
    ts = _timestamp(cfg)
    if ts:
        diag["timestamp"] = ts
    path = os.path.join(cfg.outdir, "diagnostics.json")
    _write_json(path, diag)
    print(path)
    return EXIT_OK


def _parse_jump(spec, v):
    try:
        rate, law, scale = spec.split(":")
        return JumpSpec(rate=float(rate), law=law.strip(), loading=float(scale) * np.eye(v))
    except ValueError as exc:
        raise PreconditionError(f"bad jump spec {spec!r}; expected RATE:LAW:SCALE") from exc


def cmd_verify_bound(cfg):
    _require(cfg, "manifest", "order")
    system = _load(cfg)
    if system.n > cfg.max_dim:
        raise DimensionCapError(f"dimension exceeds solver cap: n={system.n} > {cfg.max_dim}")
    T = float(cfg.horizon)
    if cfg.control is not None:
        control = parse_control_spec(cfg.control, system.m, horizon=T)
    else:
        control = load_control(cfg.manifest, horizon=T)
        if control is None:
            control = ControlSignal.constant(np.ones(system.m), horizon=T)
    jump = _parse_jump(cfg.jump, system.v) if cfg.jump else None
    levy = LevyProcessSpec.with_total_covariance(system.K, jump)
    sim = SimConfig(T=T, dt=cfg.dt, n_paths=cfg.paths, seed=cfg.seed,
                    chunk_size=cfg.chunk_size, workers=cfg.workers)
    report = _stage("verify-bound", verify_bound, system, cfg.order, control, levy, sim,
                    newton_tol=cfg.tol_newton, max_iters=cfg.max_iters, max_dim=cfg.max_dim,
                    group_tol=cfg.tol_group, sigma_floor=cfg.tol_sigma_floor,
                    zero_tol=cfg.tol_zero, stability_tol=cfg.tol_stability)
    text = report.to_json(timestamp=not cfg.no_timestamp)
    if cfg.outdir:
        os.makedirs(cfg.outdir, exist_ok=True)
        path = os.path.join(cfg.outdir, "bound_report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(cfg.outdir, "per_step.csv"), "w", encoding="utf-8") as fh:
            fh.write(report.per_step_csv())
        print(path)
    else:
        print(text)
    print(f"verdict: {report.verdict} (bound {report.total_bound:.6g}, "
          f"MC root {report.mc_estimate.root:.6g} +- "
          f"{report.mc_estimate.root_std_error:.2g})", file=sys.stderr)
    return {PASS: EXIT_OK, FAIL: EXIT_FAIL, INCONCLUSIVE: EXIT_INCONCLUSIVE}[report.verdict]


def cmd_demo(cfg):
    _require(cfg, "outdir")
    accept = functools.partial(riccati_solvable, noise_factor=2.0)
    system = generate_test_system(cfg.n, cfg.m, cfg.p, cfg.v, cfg.seed,
                                  stability_margin=cfg.margin, accept=accept)
    if cfg.linear:
        system = system.replace(N=[np.zeros((system.n, system.n))] * system.m)
    control = ControlSignal.sinusoid(np.ones(system.m), 1.0, horizon=1.0)
    path = save_system(system, cfg.outdir, control=control, extra={
        "generator": {"seed": cfg.seed, "margin": cfg.margin, "linear": bool(cfg.linear)}})
    run = {
        "manifest": os.path.basename(path),
        "order": max(1, system.n // 2),
        "paths": 10_000,
        "horizon": 1.0,
        "seed": cfg.seed,
        "no_timestamp": True,
    }
    _write_json(os.path.join(cfg.outdir, "config.json"), run)
    print(path)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "reduce": cmd_reduce,
    "verify-bound": cmd_verify_bound,
    "demo": cmd_demo,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose or 0, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InadmissibleOrderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"group boundaries: {list(exc.cuts)}", file=sys.stderr)
        return EXIT_ORDER
    except DimensionCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (InstabilityError, DimensionError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BilinspaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
