"""System manifests: one JSON file pointing at Matrix Market matrices.

Layout::

    {
      "format": "bilinspa-system",
      "dimensions": {"n": 6, "m": 2, "p": 1, "v": 1},
      "matrices": {"A": "A.mtx", "B": "B.mtx", "C": "C.mtx",
                   "N": ["N1.mtx", "N2.mtx"], "H": ["H1.mtx"], "K": "K.mtx"},
      "control": {"kind": "sinusoid", "amplitude": [1, 1], "frequency": 1.0}
    }

Paths are relative to the manifest. ``control`` may instead be
``{"csv": "u.csv"}``, a table with columns ``t, u_1, ..., u_m``. Reduced
models use ``"format": "bilinspa-rom"``, an ``order`` field and the extra
matrices ``D``, ``E`` and ``F``.
"""

import json
import os

import numpy as np
import scipy.io as sio

from .controls import ControlSignal
from .exceptions import DimensionError, ManifestError
from .reduction import ReducedModel
from .system import BilinearStochasticSystem

__all__ = [
    "read_matrix",
    "write_matrix",
    "load_system",
    "save_system",
    "save_rom",
    "load_rom",
    "load_control",
    "read_control_csv",
]

SYSTEM_FORMAT = "bilinspa-system"
ROM_FORMAT = "bilinspa-rom"


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(base, path)


def _mm_shape(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("%"):
                return tuple(int(x) for x in line.split()[:2])
    raise ManifestError(f"{path}: missing Matrix Market size line")


def read_matrix(path):
    """Dense float array from a Matrix Market file (array or coordinate)."""
    if not os.path.exists(path):
        raise ManifestError(f"file not found: {path}")
    try:
        shape = _mm_shape(path)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ManifestError(f"cannot parse Matrix Market file {path}: {exc}") from exc
    # scipy's reader faults on zero-sized matrices
    if 0 in shape:
        return np.zeros(shape)
    try:
        M = sio.mmread(path)
    except (ValueError, IndexError, OSError) as exc:
        raise ManifestError(f"cannot parse Matrix Market file {path}: {exc}") from exc
    if hasattr(M, "toarray"):
        M = M.toarray()
    M = np.asarray(M)
    if np.iscomplexobj(M):
        raise ManifestError(f"{path}: complex matrices are not supported")
    return M.astype(float)


def write_matrix(path, M):
    """Write a dense real general array, digits sufficient for exact round-trip."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        shape = M.shape if M.ndim == 2 else (0, 0)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"%%MatrixMarket matrix array real general\n{shape[0]} {shape[1]}\n")
        return
    sio.mmwrite(path, np.atleast_2d(np.asarray(M, dtype=float)), field="real",
                symmetry="general", precision=17)


def _load_json(path):
    if not os.path.exists(path):
        raise ManifestError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _matrices(manifest, path):
    try:
        return manifest["matrices"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing 'matrices' section") from exc


def _check_declared(dims, system, path):
    actual = {"n": system.n, "m": system.m, "p": system.p, "v": system.v}
    for key, val in (dims or {}).items():
        if key in actual and int(val) != actual[key]:
            raise DimensionError(
                f"{path}: declared {key}={val} but matrices give {key}={actual[key]}")


def load_system(path):
    """Load a :class:`BilinearStochasticSystem` from a manifest file."""
    manifest = _load_json(path)
    base = os.path.dirname(os.path.abspath(path))
    mats = _matrices(manifest, path)
    dims = manifest.get("dimensions", {})
    try:
        A = read_matrix(_resolve(base, mats["A"]))
        n = A.shape[0]
        B = (read_matrix(_resolve(base, mats["B"])) if "B" in mats
             else np.zeros((n, int(dims.get("m", 0)))))
        C = read_matrix(_resolve(base, mats["C"]))
    except KeyError as exc:
        raise ManifestError(f"{path}: matrix {exc.args[0]!r} is missing") from exc
    N = [read_matrix(_resolve(base, f)) for f in mats.get("N", [])]
    H = [read_matrix(_resolve(base, f)) for f in mats.get("H", [])]
    if "K" in mats:
        K = read_matrix(_resolve(base, mats["K"]))
    else:
        K = np.zeros((len(H), len(H)))
    if B.ndim == 2 and B.shape[0] != n and B.shape[1] == n:
        raise DimensionError(f"{path}: B has shape {B.shape}; expected n rows")
    system = BilinearStochasticSystem(A=A, B=B, C=C, N=N, H=H, K=K)
    _check_declared(dims, system, path)
    return system


def _write_set(outdir, prefix, mats):
    names = {}
    for key, val in mats.items():
        if isinstance(val, (list, tuple)):
            files = []
            for k, M in enumerate(val, start=1):
                fname = f"{prefix}{key}{k}.mtx"
                write_matrix(os.path.join(outdir, fname), M)
                files.append(fname)
            names[key] = files
        else:
            fname = f"{prefix}{key}.mtx"
            write_matrix(os.path.join(outdir, fname), val)
            names[key] = fname
    return names


def _dump(path, manifest):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_system(system, outdir, name="system", control=None, extra=None):
    """Write matrices and ``<name>.json``; returns the manifest path."""
    os.makedirs(outdir, exist_ok=True)
    mats = {"A": system.A, "B": system.B, "C": system.C, "N": list(system.N),
            "H": list(system.H), "K": system.K}
    manifest = {
        "format": SYSTEM_FORMAT,
        "dimensions": {"n": system.n, "m": system.m, "p": system.p, "v": system.v},
        "matrices": _write_set(outdir, "", mats),
    }
    if control is not None:
        manifest["control"] = control.describe()
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, f"{name}.json")
    _dump(path, manifest)
    return path


def save_rom(rom, outdir, name="rom", extra=None):
    """Write a reduced model in the manifest layout with ``order``, ``D``, ``E``, ``F``."""
    os.makedirs(outdir, exist_ok=True)
    mats = {"A": rom.A, "B": rom.B, "C": rom.C, "D": rom.D, "N": list(rom.N),
            "H": list(rom.H), "E": list(rom.E), "F": list(rom.F), "K": rom.K}
    manifest = {
        "format": ROM_FORMAT,
        "order": rom.r,
        "dimensions": {"n": rom.r, "m": rom.m, "p": rom.p, "v": rom.v},
        "matrices": _write_set(outdir, "rom_", mats),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, f"{name}.json")
    _dump(path, manifest)
    return path


def load_rom(path):
    manifest = _load_json(path)
    if manifest.get("format") != ROM_FORMAT:
        raise ManifestError(f"{path}: not a reduced-model manifest")
    base = os.path.dirname(os.path.abspath(path))
    mats = _matrices(manifest, path)

    def one(key):
        return read_matrix(_resolve(base, mats[key]))

    def many(key):
        return tuple(read_matrix(_resolve(base, f)) for f in mats.get(key, []))

    return ReducedModel(r=int(manifest["order"]), A=one("A"), B=one("B"), C=one("C"),
                        D=one("D"), E=many("E"), F=many("F"), H=many("H"), N=many("N"),
                        K=one("K"))


def read_control_csv(path, horizon=None):
    """Piecewise-constant table control from CSV rows ``t, u_1, ..., u_m``.

    A non-numeric first row is treated as a header.
    """
    if not os.path.exists(path):
        raise ManifestError(f"file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                if not rows and lineno == 1:
                    continue
                raise ManifestError(f"{path}:{lineno}: non-numeric field in {line!r}") from exc
            if len(rows[-1]) != len(rows[0]):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows or len(rows[0]) < 2:
        raise ManifestError(f"{path}: need at least one row with t and one control column")
    data = np.array(rows)
    return ControlSignal.table(data[:, 0], data[:, 1:], horizon=horizon)


def load_control(manifest_path, horizon=None):
    """Control declared in a manifest, or None if absent."""
    manifest = _load_json(manifest_path)
    spec = manifest.get("control")
    if spec is None:
        return None
    if "csv" in spec:
        base = os.path.dirname(os.path.abspath(manifest_path))
        return read_control_csv(_resolve(base, spec["csv"]), horizon=horizon)
    return ControlSignal.from_dict(spec, horizon=horizon)
