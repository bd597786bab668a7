"""Deterministic control signals and their L2 norms."""

from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import PreconditionError

__all__ = ["ControlSignal", "control_l2_norm", "time_grid", "parse_control_spec"]

KINDS = ("constant", "sinusoid", "table", "zero")


def time_grid(T, dt):
    """Uniform grid ``0, dt, ..., T``; ``T/dt`` must be an integer up to rounding."""
    if not dt > 0:
        raise PreconditionError("dt must be > 0")
    if not T > 0:
        raise PreconditionError("horizon must be > 0")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise PreconditionError(f"T={T} is not an integer multiple of dt={dt}")
    return np.linspace(0.0, T, steps + 1)


@dataclass(frozen=True)
class ControlSignal:
    """A deterministic, square-integrable control ``u: [0, T] -> R^m``.

    kinds
        ``constant``  u(t) = amplitude
        ``sinusoid``  u(t) = amplitude * sin(2 pi frequency t + phase)
        ``table``     piecewise constant, u(t) = values[k] on [times[k], times[k+1])
                      and values[-1] after the last breakpoint
        ``zero``      u(t) = 0 in R^m
    """

    kind: str
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frequency: float = 0.0
    phase: float = 0.0
    times: np.ndarray = None
    values: np.ndarray = None
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown control kind {self.kind!r}")
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        amp.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        if self.kind == "table":
            t = np.asarray(self.times, dtype=float).ravel()
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim == 1:
                vals = vals.reshape(-1, 1)
            if t.size == 0 or vals.shape[0] != t.size:
                raise PreconditionError("table needs one value row per breakpoint")
            if np.any(np.diff(t) <= 0):
                raise PreconditionError("table breakpoints must be increasing")
            t.setflags(write=False)
            vals.setflags(write=False)
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, amplitude, horizon=1.0):
        return cls("constant", amplitude=amplitude, horizon=horizon)

    @classmethod
    def sinusoid(cls, amplitude, frequency, phase=0.0, horizon=1.0):
        return cls("sinusoid", amplitude=amplitude, frequency=frequency,
                   phase=phase, horizon=horizon)

    @classmethod
    def table(cls, times, values, horizon=None):
        times = np.asarray(times, dtype=float)
        if horizon is None:
            horizon = float(times[-1]) if times.size > 1 else 1.0
        return cls("table", times=times, values=values, horizon=horizon)

    @classmethod
    def zero(cls, m, horizon=1.0):
        return cls("zero", amplitude=np.zeros(m), horizon=horizon)

    @property
    def m(self):
        if self.kind == "table":
            return self.values.shape[1]
        return self.amplitude.size

    def __call__(self, t):
        """Evaluate at scalar ``t`` (shape ``(m,)``) or array ``t`` (``(len(t), m)``)."""
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        if self.kind == "zero":
            out = np.zeros((tt.size, self.m))
        elif self.kind == "constant":
            out = np.broadcast_to(self.amplitude, (tt.size, self.m)).copy()
        elif self.kind == "sinusoid":
            s = np.sin(2 * np.pi * self.frequency * tt + self.phase)
            out = s[:, None] * self.amplitude[None, :]
        else:
            idx = np.searchsorted(self.times, tt, side="right") - 1
            out = np.where((idx >= 0)[:, None],
                           self.values[np.clip(idx, 0, None)], 0.0)
        return out[0] if scalar else out

    def masked(self, mask):
        """Copy with components where ``mask`` is False forced to zero."""
        mask = np.asarray(mask, dtype=bool)
        if mask.size != self.m:
            raise PreconditionError("mask length differs from control dimension")
        w = mask.astype(float)
        if self.kind == "table":
            return ControlSignal("table", times=self.times, values=self.values * w,
                                 horizon=self.horizon)
        if self.kind == "zero":
            return self
        return ControlSignal(self.kind, amplitude=self.amplitude * w,
                             frequency=self.frequency, phase=self.phase,
                             horizon=self.horizon)

    def describe(self):
        """JSON-ready dictionary, the inline manifest form."""
        d = {"kind": self.kind, "horizon": self.horizon}
        if self.kind in ("constant", "sinusoid", "zero"):
            d["amplitude"] = self.amplitude.tolist()
        if self.kind == "sinusoid":
            d["frequency"] = self.frequency
            d["phase"] = self.phase
        if self.kind == "table":
            d["times"] = self.times.tolist()
            d["values"] = self.values.tolist()
        return d

    @classmethod
    def from_dict(cls, d, horizon=None):
        kind = d.get("kind")
        T = d.get("horizon", horizon if horizon is not None else 1.0)
        if kind == "constant":
            return cls.constant(d["amplitude"], horizon=T)
        if kind == "sinusoid":
            return cls.sinusoid(d["amplitude"], d["frequency"], d.get("phase", 0.0),
                                horizon=T)
        if kind == "zero":
            m = d.get("m", len(d.get("amplitude", [])))
            return cls.zero(m, horizon=T)
        if kind == "table":
            return cls.table(d["times"], d["values"], horizon=T)
        raise PreconditionError(f"unknown control kind {kind!r}")


def control_l2_norm(u, T, quadrature_dt):
    """``(int_0^T ||u(t)||^2 dt)^(1/2)`` by composite trapezoid on a uniform grid.

    Table controls are integrated segment by segment instead, which is exact
    for piecewise-constant signals and coincides with the left-point rule the
    simulator uses when the breakpoints lie on the grid.
    """
    if not quadrature_dt > 0:
        raise PreconditionError("quadrature_dt must be > 0")
    if u.kind == "zero" or u.m == 0:
        return 0.0
    if u.kind == "table":
        edges = np.concatenate([u.times, [np.inf]])
        total = []
        for k in range(u.times.size):
            a, b = max(edges[k], 0.0), min(edges[k + 1], T)
            if b > a:
                total.append((b - a) * float(u.values[k] @ u.values[k]))
        return math.sqrt(math.fsum(total))
    t = time_grid(T, quadrature_dt)
    vals = np.sum(u(t) ** 2, axis=1)
    return math.sqrt(max(float(np.trapezoid(vals, t)), 0.0))


def parse_control_spec(spec, m, horizon=1.0):
    """Parse a CLI control spec.

    Forms: ``zero``, ``constant:1,0.5``, ``sinusoid:1,0.5@2`` (amplitudes,
    then frequency after ``@``). A single amplitude is broadcast to all
    ``m`` inputs.
    """
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "zero":
        return ControlSignal.zero(m, horizon=horizon)
    if kind not in ("constant", "sinusoid"):
        raise PreconditionError(f"unknown control spec {spec!r}")
    amp_txt, _, freq_txt = rest.partition("@")
    try:
        amp = np.array([float(a) for a in amp_txt.split(",") if a.strip()])
    except ValueError as exc:
        raise PreconditionError(f"bad amplitudes in control spec {spec!r}") from exc
    if amp.size == 1:
        amp = np.full(m, amp[0])
    if amp.size != m:
        raise PreconditionError(f"control spec gives {amp.size} amplitudes, need {m}")
    if kind == "constant":
        return ControlSignal.constant(amp, horizon=horizon)
    freq = float(freq_txt) if freq_txt.strip() else 1.0
    return ControlSignal.sinusoid(amp, freq, horizon=horizon)
