"""Y-periodic scalar coefficient functions ``y -> c(y)``.

Coefficients are used as weights and exponents of N-functions and operators.
Every coefficient reduces its argument modulo 1, reports exact lower and
upper bounds, and round-trips through a small declarative record::

    3.0                                        # constant
    {"kind": "piecewise", "values": [1, 3]}    # equal sub-intervals along an axis
    {"kind": "step", "values": [2, 3], "at": 0.5}
    {"kind": "sin", "mean": 2, "amplitude": 1}  # mean + amplitude*sin(2 pi y)
    {"kind": "cos", ...}, {"kind": "sin2", ...}  # sin2: mean + amplitude*sin^2(pi y)
    {"kind": "sinsin", ...}                    # mean + amplitude*sin(2 pi y1) sin(2 pi y2)
    {"kind": "samples", "values": [...]}       # periodic piecewise-linear samples
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CoefficientError(ValueError):
    """Invalid coefficient description."""


def _frac(y):
    y = np.asarray(y, dtype=float)
    return y - np.floor(y)


def _axis_values(y, axis):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        return y
    return y[..., axis]


class Coefficient:
    """Base class; subclasses implement ``_eval`` on reduced coordinates."""

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self._eval(_frac(y))

    def bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        lo, hi = self.bounds()
        return lo == hi

    def to_config(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Coefficient):
    value: float

    def _eval(self, y):
        shape = y.shape[:-1] if y.ndim >= 1 else ()
        return np.full(shape, float(self.value))

    def bounds(self):
        return float(self.value), float(self.value)

    def to_config(self):
        return float(self.value)


@dataclass(frozen=True)
class Piecewise(Coefficient):
    """Piecewise constant on ``len(values)`` equal sub-intervals of one axis."""

    values: tuple
    axis: int = 0

    def _eval(self, y):
        t = _axis_values(y, self.axis)
        k = len(self.values)
        idx = np.minimum((t * k).astype(int), k - 1)
        return np.asarray(self.values, dtype=float)[idx]

    def bounds(self):
        return float(min(self.values)), float(max(self.values))

    def to_config(self):
        return {"kind": "piecewise", "values": list(self.values), "axis": self.axis}


@dataclass(frozen=True)
class Step(Coefficient):
    """``values[0]`` on ``[0, at)`` and ``values[1]`` on ``[at, 1)`` along one axis."""

    values: tuple
    at: float = 0.5
    axis: int = 0

    def _eval(self, y):
        t = _axis_values(y, self.axis)
        lo, hi = self.values
        return np.where(t < self.at, float(lo), float(hi))

    def bounds(self):
        return float(min(self.values)), float(max(self.values))

    def to_config(self):
        return {"kind": "step", "values": list(self.values), "at": self.at, "axis": self.axis}


@dataclass(frozen=True)
class Trig(Coefficient):
    """Smooth trigonometric coefficient; see the module docstring for kinds."""

    kind: str
    mean: float
    amplitude: float
    axis: int = 0

    def _eval(self, y):
        a = float(self.amplitude)
        if self.kind == "sinsin":
            y = np.asarray(y)
            return self.mean + a * np.sin(2 * np.pi * y[..., 0]) * np.sin(2 * np.pi * y[..., 1])
        t = _axis_values(y, self.axis)
        if self.kind == "sin":
            return self.mean + a * np.sin(2 * np.pi * t)
        if self.kind == "cos":
            return self.mean + a * np.cos(2 * np.pi * t)
        return self.mean + a * np.sin(np.pi * t) ** 2

    def bounds(self):
        a = float(self.amplitude)
        if self.kind == "sin2":
            return float(min(self.mean, self.mean + a)), float(max(self.mean, self.mean + a))
        return float(self.mean - abs(a)), float(self.mean + abs(a))

    def to_config(self):
        return {"kind": self.kind, "mean": self.mean, "amplitude": self.amplitude,
                "axis": self.axis}


@dataclass(frozen=True)
class Samples(Coefficient):
    """Periodic (multi)linear interpolation of values on a uniform lattice.

    The lattice excludes the endpoint ``y = 1``.  A sample array that repeats
    the endpoint must agree with its start, otherwise it is not periodic.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2) or min(v.shape) < 2:
            raise CoefficientError("samples must be a 1D or 2D array with >= 2 points per axis")
        if not np.all(np.isfinite(v)):
            raise CoefficientError("samples must be finite")
        object.__setattr__(self, "values", v)

    def __hash__(self):
        return hash(self.values.tobytes())

    def __eq__(self, other):
        return isinstance(other, Samples) and np.array_equal(self.values, other.values)

    def _eval(self, y):
        v = self.values
        if v.ndim == 1:
            t = _axis_values(y, 0)
            n = v.size
            s = t * n
            i0 = np.floor(s).astype(int) % n
            f = s - np.floor(s)
            return (1 - f) * v[i0] + f * v[(i0 + 1) % n]
        y = np.asarray(y)
        n1, n2 = v.shape
        s1, s2 = y[..., 0] * n1, y[..., 1] * n2
        i, j = np.floor(s1).astype(int) % n1, np.floor(s2).astype(int) % n2
        f, g = s1 - np.floor(s1), s2 - np.floor(s2)
        ip, jp = (i + 1) % n1, (j + 1) % n2
        return ((1 - f) * (1 - g) * v[i, j] + f * (1 - g) * v[ip, j]
                + (1 - f) * g * v[i, jp] + f * g * v[ip, jp])

    def bounds(self):
        return float(self.values.min()), float(self.values.max())

    def to_config(self):
        return {"kind": "samples", "values": self.values.tolist()}


def make_coefficient(spec) -> Coefficient:
    """Build a coefficient from a number, a coefficient, or a config record."""
    if isinstance(spec, Coefficient):
        return spec
    if isinstance(spec, (int, float, np.integer, np.floating)) and not isinstance(spec, bool):
        return Constant(float(spec))
    if not isinstance(spec, dict):
        raise CoefficientError(f"cannot interpret coefficient {spec!r}")
    kind = spec.get("kind")
    axis = int(spec.get("axis", 0))
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "piecewise":
        vals = tuple(float(v) for v in spec["values"])
        if not vals:
            raise CoefficientError("piecewise coefficient needs at least one value")
        return Piecewise(vals, axis)
    if kind == "step":
        vals = tuple(float(v) for v in spec["values"])
        if len(vals) != 2:
            raise CoefficientError("step coefficient needs exactly two values")
        at = float(spec.get("at", 0.5))
        if not 0 < at < 1:
            raise CoefficientError("step location must lie in (0, 1)")
        return Step(vals, at, axis)
    if kind in ("sin", "cos", "sin2", "sinsin"):
        return Trig(kind, float(spec.get("mean", 0.0)), float(spec.get("amplitude", 1.0)), axis)
    if kind == "samples":
        v = np.asarray(spec["values"], dtype=float)
        if spec.get("endpoint", False):
            first = v[(0,) * v.ndim]
            ends = [np.take(v, -1, axis=a) for a in range(v.ndim)]
            starts = [np.take(v, 0, axis=a) for a in range(v.ndim)]
            if not all(np.allclose(e, s, rtol=1e-12, atol=1e-12) for e, s in zip(ends, starts)):
                raise CoefficientError(
                    "sample array includes the endpoint but is not periodic "
                    f"(first value {first}, last values differ)")
            for a in range(v.ndim):
                v = np.delete(v, -1, axis=a)
        return Samples(v)
    raise CoefficientError(f"unknown coefficient kind {kind!r}")
