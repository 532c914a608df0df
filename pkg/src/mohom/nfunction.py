"""N-functions, tabulated convex functions and discrete conjugation.

Every built-in N-function is a sum of *terms* ``w(y) * phi(|xi|; q(y))`` where
``phi`` is one of

* ``power``:  ``t**p / p`` (or ``t**p`` with ``normalized=False``),
* ``exp``:    ``exp(t) - t - 1``,
* ``tlog``:   ``t * log(1 + t)``,

and ``w``, ``q`` are Y-periodic coefficients.  Scalar N-functions (no spatial
dependence) use the same machinery with constant coefficients, plus two
auxiliary kinds used for envelopes: ``maxpow`` (``max(t**p1, t**p2) / p1``)
and ``table`` (convex piecewise-linear interpolant with a linear tail).

Shapes: ``y`` has trailing axis ``d``; ``xi`` has trailing axis ``m = d*N``.
Leading axes broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import io as _io
from .coefficients import Coefficient, Constant, make_coefficient


class RangeError(ValueError):
    """An argument lies outside the range of a tabulation."""


class BoundarySaturationError(RuntimeError):
    """A discrete supremum is attained on the primal boundary for an interior dual node."""

    def __init__(self, message, dual_point=None, primal_point=None):
        super().__init__(message)
        self.dual_point = dual_point
        self.primal_point = primal_point


# ---------------------------------------------------------------------------
# elementary profiles


def _phi(kind, t, p, normalized=True, extra=()):
    """Value and first two derivatives of an elementary profile at ``t >= 0``."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if kind == "power":
            c = 1.0 / p if normalized else np.ones_like(p)
            v = c * t**p
            d1 = c * p * t ** (p - 1)
            d2 = np.where(t > 0, c * p * (p - 1) * t ** (p - 2),
                          np.where(p < 2, np.inf, np.where(p == 2, 2.0 * c, 0.0)))
            return v, d1, d2
        if kind == "exp":
            e = np.expm1(t)
            return e - t, e, e + 1.0
        if kind == "tlog":
            lp = np.log1p(t)
            return t * lp, lp + t / (1.0 + t), (2.0 + t) / (1.0 + t) ** 2
        if kind == "maxpow":
            p1, p2 = extra
            lo = t <= 1.0
            v = np.where(lo, t**p1, t**p2) / p1
            d1 = np.where(lo, p1 * t ** (p1 - 1), p2 * t ** (p2 - 1)) / p1
            d2 = np.where(lo, p1 * (p1 - 1) * t ** (p1 - 2), p2 * (p2 - 1) * t ** (p2 - 2)) / p1
            d2 = np.where(t > 0, d2, np.where(p1 < 2, np.inf, np.where(p1 == 2, 2.0 / p1, 0.0)))
            return v, d1, d2
        if kind == "table":
            x, f = extra
            slopes = np.diff(f) / np.diff(x)
            k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(slopes) - 1)
            v = f[k] + slopes[k] * (t - x[k])
            return v, slopes[k], np.zeros_like(v)
    raise ValueError(f"unknown profile kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Term:
    """One summand ``weight(y) * phi(t; exponent(y))`` of a radial profile."""

    kind: str
    weight: Coefficient = Constant(1.0)
    exponent: Coefficient | None = None
    normalized: bool = True
    extra: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "exp", "tlog", "maxpow", "table"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == "power":
            if self.exponent is None:
                raise ValueError("power term needs an exponent")
            lo, _ = self.exponent.bounds()
            if lo <= 1:
                raise ValueError(f"power exponent must exceed 1, got min {lo}")
        lo, _ = self.weight.bounds()
        if lo <= 0:
            raise ValueError(f"term weight must be positive, got min {lo}")

    @property
    def spatially_constant(self):
        return self.weight.is_constant and (self.exponent is None or self.exponent.is_constant)

    def evaluate(self, y, t, order=2):
        w = self.weight(y)
        p = self.exponent(y) if self.exponent is not None else None
        if p is not None:
            t, p = np.broadcast_arrays(t, p)
        v, d1, d2 = _phi(self.kind, t, p, self.normalized, self.extra)
        return w * v, w * d1, w * d2

    def to_config(self):
        out = {"kind": self.kind, "weight": self.weight.to_config()}
        if self.exponent is not None:
            out["p"] = self.exponent.to_config()
            out["normalized"] = self.normalized
        if self.kind == "maxpow":
            out["p"] = list(self.extra)
        if self.kind == "table":
            out["t"] = np.asarray(self.extra[0]).tolist()
            out["values"] = np.asarray(self.extra[1]).tolist()
        return out


def _y_dummy(t):
    return np.zeros(np.shape(t) + (1,))


def _profile(terms, y, t):
    v = d1 = d2 = 0.0
    for term in terms:
        a, b, c = term.evaluate(y, t)
        v, d1, d2 = v + a, d1 + b, d2 + c
    return v, d1, d2


def _invert_derivative(terms, y, s, tol=1e-15, max_iter=400):
    """Solve ``Phi'(y, t) = s`` for ``t >= 0`` (vectorised safeguarded Newton).

    ``Phi'`` is nondecreasing; for piecewise-constant derivatives the returned
    ``t`` is a point of the subdifferential ``s in dPhi(t)``.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(s.shape, y.shape[:-1])
    s = np.broadcast_to(s, shape).astype(float)
    y = np.broadcast_to(y, shape + y.shape[-1:])
    if len(terms) == 1 and terms[0].kind in ("power", "exp"):
        term = terms[0]
        w = term.weight(y)
        if term.kind == "exp":
            return np.log1p(s / w)
        p = term.exponent(y)
        c = 1.0 if term.normalized else p
        return (s / (w * c)) ** (1.0 / (p - 1.0))
    lo = np.zeros(shape)
    hi = np.ones(shape)
    for _ in range(2100):
        _, d1, _ = _profile(terms, y, hi)
        short = d1 < s
        if not short.any():
            break
        hi = np.where(short, 2 * hi, hi)
        lo = np.where(short, hi / 2, lo)
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        _, d1, d2 = _profile(terms, y, t)
        g = d1 - s
        lo = np.where(g < 0, t, lo)
        hi = np.where(g >= 0, t, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - g / d2
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        done = (hi - lo) <= tol * np.maximum(hi, 1e-300)
        if np.all(done | (g == 0)):
            t = np.where(g == 0, t, tn)
            break
        t = tn
    return np.where(s > 0, t, 0.0)


# ---------------------------------------------------------------------------
# scalar N-functions


class ScalarNFunction:
    """N-function of a single variable ``t >= 0`` (evaluated at ``|t|``).

    Args:
        terms: list of :class:`Term` with constant coefficients.
        name: label used in reports.
    """

    def __init__(self, terms, name=""):
        terms = list(terms)
        if not terms:
            raise ValueError("a scalar N-function needs at least one term")
        for term in terms:
            if not term.spatially_constant:
                raise ValueError("scalar N-functions must have constant coefficients")
        self.terms = terms
        self.name = name or "+".join(t.kind for t in terms)

    @classmethod
    def power(cls, p, scale=1.0, normalized=True):
        return cls([Term("power", Constant(scale), Constant(p), normalized)],
                   name=f"power(p={p})")

    @classmethod
    def exponential(cls, scale=1.0):
        return cls([Term("exp", Constant(scale))], name="exp")

    @classmethod
    def tlog(cls, scale=1.0):
        return cls([Term("tlog", Constant(scale))], name="tlog")

    @classmethod
    def tabulated(cls, t, values, scale=1.0):
        """Convex piecewise-linear function through ``(t_i, values_i)``, ``t_0 = 0``."""
        t = np.asarray(t, dtype=float)
        v = np.asarray(values, dtype=float)
        if t[0] != 0 or v[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("tabulated N-function needs increasing t starting at (0, 0)")
        return cls([Term("table", Constant(scale), extra=(t, v))], name="table")

    @property
    def kind(self):
        return "tabulated" if any(t.kind == "table" for t in self.terms) else "closed-form"

    def __add__(self, other):
        if not isinstance(other, ScalarNFunction):
            return NotImplemented
        return ScalarNFunction(self.terms + other.terms, f"{self.name}+{other.name}")

    def __rmul__(self, c):
        c = float(c)
        if c <= 0:
            raise ValueError("blend weights must be positive")
        terms = [Term(t.kind, Constant(c * t.weight.value), t.exponent, t.normalized, t.extra)
                 for t in self.terms]
        return ScalarNFunction(terms, f"{c:g}*{self.name}")

    def evaluate(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        return _profile(self.terms, _y_dummy(t), t)

    def __call__(self, t):
        return self.evaluate(t)[0]

    def derivative(self, t):
        return self.evaluate(t)[1]

    def second_derivative(self, t):
        return self.evaluate(t)[2]

    def conj(self, s):
        """Pointwise complementary function ``sup_t (s t - m(t))`` for ``s >= 0``."""
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "tabulated":
            ts = self._tail_bound(s)
            return s * ts - self(ts)
        ts = _invert_derivative(self.terms, _y_dummy(s), s)
        return s * ts - self(ts)

    def _tail_bound(self, s):
        # the supremum of a piecewise-linear convex function sits on a breakpoint
        knots = np.unique(np.concatenate([np.asarray(t.extra[0]) for t in self.terms
                                          if t.kind == "table"]))
        vals = self(knots)
        slope_inf = self.derivative(knots[-1] * 2 + 1)
        out = np.empty_like(s)
        flat = out.reshape(-1)
        for i, si in enumerate(s.reshape(-1)):
            if si > slope_inf:
                flat[i] = np.inf
            else:
                flat[i] = knots[np.argmax(si * knots - vals)]
        return out

    def to_config(self):
        return {"family": "scalar", "terms": [t.to_config() for t in self.terms]}

    def __repr__(self):
        return f"ScalarNFunction({self.name})"


def lower_convex_hull(x, f):
    """Values of the lower convex envelope of the points ``(x_i, f_i)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (f[i] - f[a]) - (f[b] - f[a]) * (x[i] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], f[hull])


# ---------------------------------------------------------------------------
# spatially dependent N-functions


def log_linear_grid(radius=1e3, t_min=1e-6, per_decade=40, n_linear=400):
    """Half-line grid with logarithmic spacing near 0 and linear far field.

    The grid starts at 0, is geometric on ``[t_min, 1]`` and uniform (in log
    then linear spacing) up to ``radius``.
    """
    n_log = int(round(per_decade * np.log10(1.0 / t_min))) + 1
    a = np.geomspace(t_min, 1.0, n_log)
    if radius <= 1:
        return np.concatenate([[0.0], a[a <= radius]])
    n_mid = int(round(per_decade * np.log10(radius)))
    b = np.geomspace(1.0, radius, n_mid + 1)[1:]
    c = np.linspace(radius / 10, radius, n_linear)
    pts = np.unique(np.concatenate([[0.0], a, b, c[c > 1]]))
    return pts


class NFunction:
    """Y-periodic N-function ``M(y, xi)``.

    The built-in families are radial sums of :class:`Term` objects, or the
    separable anisotropic power family (see :class:`AnisotropicNFunction`).

    Args:
        terms: radial terms.
        structure: tag, one of ``constant``, ``radial``, ``variable_exponent``,
            ``weighted_sum``, ``anisotropic``.
        name: label used in reports.
    """

    radial = True

    def __init__(self, terms, structure="radial", name="", config=None):
        self.terms = list(terms)
        if not self.terms:
            raise ValueError("an N-function needs at least one term")
        if all(t.spatially_constant for t in self.terms):
            structure = "constant"
        self.structure = structure
        self.name = name or structure
        self.config = config
        self._envelopes = None

    @property
    def spatially_constant(self):
        return self.structure == "constant"

    # radial profile ---------------------------------------------------------
    def profile(self, y, t, order=0):
        """Profile ``M~(y, t)`` (``order`` 0), or its first/second t-derivative."""
        y = np.asarray(y, dtype=float)
        t = np.abs(np.asarray(t, dtype=float))
        return _profile(self.terms, y, t)[order]

    def _norm(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.sqrt(np.sum(xi * xi, axis=-1))

    def __call__(self, y, xi):
        return self.profile(y, self._norm(xi))

    value = __call__

    def gradient(self, y, xi):
        xi = np.asarray(xi, dtype=float)
        t = self._norm(xi)
        _, d1, d2 = _profile(self.terms, np.asarray(y, dtype=float), t)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(t > 0, d1 / np.where(t > 0, t, 1.0), d2)
        # at xi = 0 the gradient vanishes even where the curvature is infinite
        ratio = np.where((t == 0) & ~np.isfinite(ratio), 0.0, ratio)
        with np.errstate(invalid="ignore"):
            return ratio[..., None] * xi

    def hessian(self, y, xi):
        xi = np.asarray(xi, dtype=float)
        t = self._norm(xi)
        _, d1, d2 = _profile(self.terms, np.asarray(y, dtype=float), t)
        pos = t > 0
        safe = np.where(pos, t, 1.0)
        ratio = np.where(pos, d1 / safe, d2)
        n = xi / safe[..., None]
        m = xi.shape[-1]
        eye = np.eye(m)
        nn = n[..., :, None] * n[..., None, :]
        return (np.where(pos, d2, 0.0)[..., None, None] * nn
                + ratio[..., None, None] * (eye - np.where(pos[..., None, None], nn, 0.0)))

    def conj(self, y, eta):
        """Pointwise complementary function ``M*(y, eta)``."""
        eta = np.asarray(eta, dtype=float)
        s = self._norm(eta)
        y = np.asarray(y, dtype=float)
        t = _invert_derivative(self.terms, y, s)
        return s * t - self.profile(y, t)

    def conj_gradient(self, y, eta):
        eta = np.asarray(eta, dtype=float)
        s = self._norm(eta)
        t = _invert_derivative(self.terms, np.asarray(y, dtype=float), s)
        safe = np.where(s > 0, s, 1.0)
        return (np.where(s > 0, t / safe, 0.0))[..., None] * eta

    def conj_hessian(self, y, eta):
        eta = np.asarray(eta, dtype=float)
        y = np.asarray(y, dtype=float)
        s = self._norm(eta)
        t = _invert_derivative(self.terms, y, s)
        _, _, d2 = _profile(self.terms, y, t)
        pos = s > 0
        safe = np.where(pos, s, 1.0)
        n = eta / safe[..., None]
        nn = n[..., :, None] * n[..., None, :]
        with np.errstate(divide="ignore"):
            inv_d2 = np.where(d2 > 0, 1.0 / np.where(d2 > 0, d2, 1.0), np.inf)
        ratio = np.where(pos, t / safe, inv_d2)
        eye = np.eye(eta.shape[-1])
        return (np.where(pos, inv_d2, 0.0)[..., None, None] * nn
                + ratio[..., None, None] * (eye - np.where(pos[..., None, None], nn, 0.0)))

    # envelopes -------------------------------------------------------------
    @property
    def m1(self) -> ScalarNFunction:
        return self._compute_envelopes()[0]

    @property
    def m2(self) -> ScalarNFunction:
        return self._compute_envelopes()[1]

    def _compute_envelopes(self):
        if self._envelopes is not None:
            return self._envelopes
        lower, upper = [], []
        for term in self.terms:
            wlo, whi = term.weight.bounds()
            if term.exponent is None or term.exponent.is_constant:
                lower.append(Term(term.kind, Constant(wlo), term.exponent, term.normalized, term.extra))
                upper.append(Term(term.kind, Constant(whi), term.exponent, term.normalized, term.extra))
                continue
            plo, phi = term.exponent.bounds()
            t = log_linear_grid()
            ps = np.linspace(plo, phi, 65)
            c = (1.0 / ps) if term.normalized else np.ones_like(ps)
            vals = np.min(c[:, None] * t[None, :] ** ps[:, None], axis=0)
            hull = lower_convex_hull(t, vals)
            lower.append(Term("table", Constant(wlo), extra=(t, hull)))
            cu = 1.0 if term.normalized else plo
            upper.append(Term("maxpow", Constant(whi * cu), extra=(plo, phi)))
        self._envelopes = (ScalarNFunction(lower, "m1"), ScalarNFunction(upper, "m2"))
        return self._envelopes

    def to_config(self):
        if self.config is not None:
            return self.config
        return {"family": "radial", "terms": [t.to_config() for t in self.terms]}

    def __repr__(self):
        return f"NFunction({self.name}, structure={self.structure})"


class AnisotropicNFunction(NFunction):
    """Separable anisotropic power family ``sum_k a_k(y) |xi_k|**p / p`` with ``p >= 2``."""

    radial = False

    def __init__(self, p, weights, name="", config=None):
        p = float(p)
        if p < 2:
            raise ValueError("the anisotropic family requires p >= 2")
        self.p = p
        self.weights = [make_coefficient(w) for w in weights]
        self.m = len(self.weights)
        structure = ("constant" if all(w.is_constant for w in self.weights) else "anisotropic")
        self.structure = structure
        self.name = name or "anisotropic_power"
        self.config = config
        self._envelopes = None
        self.terms = []

    def _w(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([w(y) for w in self.weights], axis=-1)

    def _check(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.m:
            raise ValueError(f"expected trailing dimension {self.m}, got {xi.shape[-1]}")
        return xi

    def __call__(self, y, xi):
        xi = self._check(xi)
        return np.sum(self._w(y) * np.abs(xi) ** self.p, axis=-1) / self.p

    value = __call__

    def gradient(self, y, xi):
        xi = self._check(xi)
        return self._w(y) * np.abs(xi) ** (self.p - 2) * xi

    def hessian(self, y, xi):
        xi = self._check(xi)
        diag = (self.p - 1) * self._w(y) * np.abs(xi) ** (self.p - 2)
        return diag[..., :, None] * np.eye(self.m)

    def conj(self, y, eta):
        eta = self._check(eta)
        q = self.p / (self.p - 1)
        w = self._w(y)
        return np.sum(w ** (-1.0 / (self.p - 1)) * np.abs(eta) ** q, axis=-1) / q

    def conj_gradient(self, y, eta):
        eta = self._check(eta)
        q = self.p / (self.p - 1)
        w = self._w(y)
        return w ** (-1.0 / (self.p - 1)) * np.abs(eta) ** (q - 2) * eta

    def conj_hessian(self, y, eta):
        eta = self._check(eta)
        q = self.p / (self.p - 1)
        w = self._w(y)
        with np.errstate(divide="ignore"):
            diag = (q - 1) * w ** (-1.0 / (self.p - 1)) * np.abs(eta) ** (q - 2)
        return diag[..., :, None] * np.eye(self.m)

    def profile(self, y, t, order=0):
        raise TypeError("the anisotropic family has no radial profile")

    def _compute_envelopes(self):
        if self._envelopes is None:
            lo = min(w.bounds()[0] for w in self.weights)
            hi = max(w.bounds()[1] for w in self.weights)
            # power-mean bounds for p >= 2: m**(1-p/2)|xi|**p <= sum|xi_k|**p <= |xi|**p
            self._envelopes = (ScalarNFunction.power(self.p, lo * self.m ** (1 - self.p / 2)),
                               ScalarNFunction.power(self.p, hi))
        return self._envelopes

    def to_config(self):
        if self.config is not None:
            return self.config
        return {"family": "anisotropic_power", "p": self.p,
                "weights": [w.to_config() for w in self.weights]}


def _power_term(spec):
    p = make_coefficient(spec["p"])
    return Term("power", make_coefficient(spec.get("weight", 1.0)), p,
                bool(spec.get("normalized", True)))


def _term_from_config(spec):
    kind = spec.get("kind", "power")
    if kind == "power":
        return _power_term(spec)
    if kind in ("exp", "tlog"):
        return Term(kind, make_coefficient(spec.get("weight", 1.0)))
    raise ValueError(f"unknown term kind {kind!r}")


def make_nfunction(config) -> NFunction:
    """Build an N-function from a declarative record.

    Supported families (``family`` key)::

        power              p, scale
        weighted_power     p, weight
        variable_exponent  p (coefficient), weight, normalized
        exponential        weight
        tlog               weight
        weighted_sum       terms: [{kind, p, weight, normalized}, ...]
        radial             terms (same format), tagged radial
        anisotropic_power  p, weights: [one coefficient per xi component]
    """
    if isinstance(config, NFunction):
        return config
    if not isinstance(config, dict) or "family" not in config:
        raise ValueError("N-function config must be a mapping with a 'family' key")
    fam = config["family"]
    cfg = dict(config)
    if fam == "power":
        term = Term("power", Constant(float(cfg.get("scale", 1.0))), Constant(float(cfg["p"])),
                    bool(cfg.get("normalized", True)))
        return NFunction([term], "constant", f"power(p={cfg['p']})", cfg)
    if fam == "weighted_power":
        term = Term("power", make_coefficient(cfg.get("weight", 1.0)),
                    Constant(float(cfg["p"])), bool(cfg.get("normalized", True)))
        return NFunction([term], "radial", f"weighted_power(p={cfg['p']})", cfg)
    if fam == "variable_exponent":
        term = Term("power", make_coefficient(cfg.get("weight", 1.0)), make_coefficient(cfg["p"]),
                    bool(cfg.get("normalized", True)))
        return NFunction([term], "variable_exponent", "variable_exponent", cfg)
    if fam in ("exponential", "tlog"):
        kind = "exp" if fam == "exponential" else "tlog"
        return NFunction([Term(kind, make_coefficient(cfg.get("weight", 1.0)))], "radial", fam, cfg)
    if fam in ("weighted_sum", "radial"):
        terms = [_term_from_config(t) for t in cfg.get("terms", [])]
        return NFunction(terms, fam, fam, cfg)
    if fam == "anisotropic_power":
        return AnisotropicNFunction(cfg["p"], cfg["weights"], config=cfg)
    raise ValueError(f"unknown N-function family {fam!r}")


# ---------------------------------------------------------------------------
# tabulated convex functions and the discrete Legendre transform


@dataclass(frozen=True, eq=False)
class TabulatedConvexFunction:
    """Samples of a function on a rectilinear grid in one or two dimensions.

    Args:
        axes: tuple of strictly increasing coordinate arrays.
        values: array of shape ``tuple(len(a) for a in axes)``.
        even: 1D only; the axis covers ``[0, R]`` and ``f(x) = f(|x|)``.
        meta: free-form metadata carried through serialization.
    """

    axes: tuple
    values: np.ndarray
    even: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        vals = np.asarray(self.values, dtype=float)
        if len(axes) not in (1, 2):
            raise ValueError("tabulations must be one- or two-dimensional")
        if vals.shape != tuple(len(a) for a in axes):
            raise ValueError(f"values shape {vals.shape} does not match the grid")
        for a in axes:
            if len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("grid coordinates must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("tabulated values must be finite")
        if self.even and (len(axes) != 1 or axes[0][0] != 0):
            raise ValueError("even tabulations are 1D and start at 0")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def radius(self):
        return float(max(np.max(np.abs(a)) for a in self.axes))

    def _check_range(self, pts):
        for k, a in enumerate(self.axes):
            c = pts[..., k]
            lo = -a[-1] if self.even else a[0]
            slack = 1e-12 * max(1.0, abs(a[-1]), abs(a[0]))
            bad = (c < lo - slack) | (c > a[-1] + slack)
            if np.any(bad):
                where = np.flatnonzero(bad.ravel())[0]
                raise RangeError(
                    f"argument {pts.reshape(-1, self.ndim)[where].tolist()} outside the "
                    f"tabulated range [{lo}, {a[-1]}] on axis {k}")

    def __call__(self, x):
        """Piecewise-(bi)linear interpolation; raises :class:`RangeError` outside the grid."""
        x = np.asarray(x, dtype=float)
        if self.ndim == 1:
            pts = x[..., None]
            self._check_range(pts)
            xx = np.abs(x) if self.even else x
            return np.interp(xx, self.axes[0], self.values)
        if x.shape[-1] != 2:
            raise ValueError("2D tabulations expect points with a trailing axis of length 2")
        self._check_range(x)
        a0, a1 = self.axes
        i = np.clip(np.searchsorted(a0, x[..., 0], side="right") - 1, 0, len(a0) - 2)
        j = np.clip(np.searchsorted(a1, x[..., 1], side="right") - 1, 0, len(a1) - 2)
        f = np.clip((x[..., 0] - a0[i]) / (a0[i + 1] - a0[i]), 0, 1)
        g = np.clip((x[..., 1] - a1[j]) / (a1[j + 1] - a1[j]), 0, 1)
        v = self.values
        return ((1 - f) * (1 - g) * v[i, j] + f * (1 - g) * v[i + 1, j]
                + (1 - f) * g * v[i, j + 1] + f * g * v[i + 1, j + 1])

    def convexify(self):
        return biconjugate(self)

    def save(self, path, name="value"):
        if self.ndim == 1:
            cols = {"x": self.axes[0], name: self.values}
        else:
            X, Y = np.meshgrid(*self.axes, indexing="ij")
            cols = {"x1": X, "x2": Y, name: self.values}
        meta = dict(self.meta)
        meta.update({"ndim": self.ndim, "even": self.even, "shape": list(self.values.shape)})
        return _io.write_table(path, cols, meta)

    @classmethod
    def load(cls, path):
        cols, meta = _io.read_table(path)
        names = [n for n in cols if n not in ("x", "x1", "x2")]
        vals = cols[names[0]]
        even = bool(meta.pop("even", False))
        ndim = int(meta.pop("ndim", 1))
        shape = tuple(meta.pop("shape", [len(vals)]))
        if ndim == 1:
            return cls((cols["x"],), vals, even, meta)
        X = cols["x1"].reshape(shape)
        Y = cols["x2"].reshape(shape)
        return cls((X[:, 0], Y[0, :]), vals.reshape(shape), False, meta)


def _second_differences(x, f):
    """Divided second differences at interior nodes (NaN at the ends)."""
    d = np.full(f.shape, np.nan)
    s = np.diff(f, axis=0) / np.diff(x)[:, None]
    d[1:-1] = 2 * (s[1:] - s[:-1]) / (x[2:] - x[:-2])[:, None]
    return d


def _lft_axis(x, F, s, refine=True, method="brute"):
    """Discrete Legendre transform along axis 0.

    Args:
        x: primal nodes, shape ``(n,)``.
        F: values, shape ``(n, B)``.
        s: dual nodes, shape ``(k,)``.

    Returns:
        ``(G, idx)`` with ``G`` of shape ``(k, B)`` and ``idx`` the maximizing
        primal index (smallest index on ties).
    """
    n, B = F.shape
    k = len(s)
    idx = np.empty((k, B), dtype=int)
    if method == "monotone":
        D2 = _second_differences(x, F)[1:-1]
        if np.any(D2 < -1e-12 * (1 + np.abs(F).max())):
            return _lft_axis(x, F, s, refine, "brute")
        order = np.argsort(s, kind="stable")
        for b in range(B):
            f = F[:, b]
            j = 0
            for q in order:
                while j + 1 < n and s[q] * x[j + 1] - f[j + 1] > s[q] * x[j] - f[j]:
                    j += 1
                idx[q, b] = j
        G = s[:, None] * x[idx] - np.take_along_axis(F, idx, axis=0)
    elif method == "brute":
        G = np.empty((k, B))
        chunk = max(1, int(4e6 // max(n * B, 1)))
        for a in range(0, k, chunk):
            vals = s[a:a + chunk, None, None] * x[None, :, None] - F[None, :, :]
            ii = np.argmax(vals, axis=1)
            idx[a:a + chunk] = ii
            G[a:a + chunk] = np.take_along_axis(vals, ii[:, None, :], axis=1)[:, 0, :]
    else:
        raise ValueError(f"unknown Legendre method {method!r}")
    if refine and n >= 3:
        G = _refine(x, F, s, idx, G)
    return G, idx


def _refine(x, F, s, idx, G):
    """Parabolic refinement of the discrete maximum on smooth convex stretches."""
    n = len(x)
    D2 = _second_differences(x, F)
    i = np.clip(idx, 1, n - 2)
    interior = (idx >= 1) & (idx <= n - 2)
    cols = np.broadcast_to(np.arange(F.shape[1]), idx.shape)
    dc = D2[i, cols]
    dl = D2[np.maximum(i - 1, 1), cols]
    dr = D2[np.minimum(i + 1, n - 2), cols]
    trio = np.stack([dl, dc, dr])
    with np.errstate(invalid="ignore", divide="ignore"):
        smooth = (np.all(trio > 0, axis=0)
                  & (np.max(trio, axis=0) <= 4 * np.min(trio, axis=0)))
    ok = interior & smooth
    if not ok.any():
        return G
    sv = np.broadcast_to(s[:, None], idx.shape)
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    g0 = sv * x0 - F[i - 1, cols]
    g1 = sv * x1 - F[i, cols]
    g2 = sv * x2 - F[i + 1, cols]
    d0, d2 = x0 - x1, x2 - x1
    c = ((g2 - g1) / d2 - (g0 - g1) / d0) / (d2 - d0)
    b = (g2 - g1) / d2 - c * d2
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.clip(-b / (2 * c), d0, d2)
        peak = g1 + b * delta + c * delta**2
    good = ok & (c < 0) & np.isfinite(peak) & (peak >= G)
    return np.where(good, peak, G)


def _saturation(idx, s, x, n, even, axis_label=""):
    k = len(s)
    interior = np.zeros(k, dtype=bool)
    interior[1:-1] = True
    if even:
        interior[0] = False
    bad_hi = (idx == n - 1) & interior[:, None]
    bad_lo = (idx == 0) & interior[:, None] & (not even)
    bad = bad_hi | bad_lo
    if bad.any():
        q = np.argwhere(bad)[0]
        raise BoundarySaturationError(
            f"supremum at dual node {s[q[0]]:.6g}{axis_label} is attained on the primal "
            f"boundary x = {x[idx[q[0], q[1]]]:.6g}; enlarge the primal tabulation",
            dual_point=float(s[q[0]]), primal_point=float(x[idx[q[0], q[1]]]))


def _default_dual(x, f, even):
    slopes = np.diff(f) / np.diff(x)
    n = len(x)
    hx = np.diff(x)
    uniform = np.allclose(hx, hx[0], rtol=1e-9)
    if even:
        top = float(np.max(slopes))
        if n >= 3:
            # extrapolate the last chord slope to an estimate of m'(R)
            top += 0.5 * max(slopes[-1] - slopes[-2], 0.0)
        top = max(top, 1e-300)
        if uniform:
            return np.linspace(0.0, top, n)
        # slope-adapted nodes keep a log-spaced primal grid resolved near 0
        mid = np.maximum.accumulate(np.maximum(slopes, 0.0))
        s = np.unique(np.concatenate([[0.0], mid]))
        return s
    lo, hi = float(np.min(slopes)), float(np.max(slopes))
    if uniform:
        return np.linspace(lo, hi, n)
    return np.unique(np.concatenate([[lo], np.sort(slopes), [hi]]))


def _as_dual(spec, x, f, even):
    if spec is None:
        return _default_dual(x, f, even)
    if np.isscalar(spec):
        r = float(spec)
        return np.linspace(0.0, r, len(x)) if even else np.linspace(-r, r, len(x))
    s = np.asarray(spec, dtype=float)
    if s.ndim != 1 or np.any(np.diff(s) <= 0):
        raise ValueError("dual grid must be a strictly increasing 1D array")
    if even and s[0] < 0:
        raise ValueError("dual grid of an even tabulation must start at s >= 0")
    return s


def tabulate(m, grid):
    """Tabulate a scalar N-function (even, on ``[0, R]``) or a callable on a grid.

    Args:
        m: :class:`ScalarNFunction` or callable of one (1D) or two (2D) arrays.
        grid: nonnegative 1D array (even tabulation of a scalar N-function),
            or a tuple of axes for a general callable.
    """
    if isinstance(m, ScalarNFunction):
        x = np.asarray(grid, dtype=float)
        if x[0] != 0:
            x = np.concatenate([[0.0], x[x > 0]])
        return TabulatedConvexFunction((x,), m(x), even=True, meta={"source": m.name})
    axes = tuple(np.asarray(a, dtype=float) for a in (grid if isinstance(grid, tuple) else (grid,)))
    if len(axes) == 1:
        return TabulatedConvexFunction(axes, np.asarray(m(axes[0]), dtype=float))
    X, Y = np.meshgrid(*axes, indexing="ij")
    return TabulatedConvexFunction(axes, np.asarray(m(X, Y), dtype=float))


def conjugate(m, grid=None, dual=None, *, strict=True, refine=True, method="brute"):
    """Discrete Legendre-Fenchel transform ``m*(s) = sup_x (s.x - m(x))``.

    Args:
        m: :class:`TabulatedConvexFunction` or :class:`ScalarNFunction`.
        grid: primal grid when ``m`` is a scalar N-function (nonnegative nodes).
        dual: dual nodes (1D array, or a tuple of arrays in 2D), or a radius;
            by default the range of discrete slopes is covered.
        strict: raise :class:`BoundarySaturationError` when an interior dual
            node is maximized on the primal boundary.
        refine: parabolic refinement of the discrete maximum where the samples
            are smoothly convex (never across kinks).
        method: ``"brute"`` or ``"monotone"`` (two-pointer pass, verified and
            falling back to brute force on non-convex data).

    Returns:
        :class:`TabulatedConvexFunction` on the dual grid.
    """
    if isinstance(m, ScalarNFunction):
        if grid is None:
            grid = log_linear_grid()
        m = tabulate(m, grid)
    if not isinstance(m, TabulatedConvexFunction):
        raise TypeError("conjugate expects a ScalarNFunction or TabulatedConvexFunction")
    if m.ndim == 1:
        x = m.axes[0]
        s = _as_dual(dual, x, m.values, m.even)
        G, idx = _lft_axis(x, m.values[:, None], s, refine, method)
        if strict:
            _saturation(idx, s, x, len(x), m.even)
        return TabulatedConvexFunction((s,), G[:, 0], even=m.even,
                                       meta={"transform": "conjugate"})
    x1, x2 = m.axes
    if dual is None or np.isscalar(dual):
        d1 = _as_dual(dual, x1, m.values[:, len(x2) // 2], False)
        d2 = _as_dual(dual, x2, m.values[len(x1) // 2, :], False)
        if dual is None:
            s1 = np.diff(m.values, axis=0) / np.diff(x1)[:, None]
            s2 = np.diff(m.values, axis=1) / np.diff(x2)[None, :]
            d1 = np.linspace(s1.min(), s1.max(), len(x1))
            d2 = np.linspace(s2.min(), s2.max(), len(x2))
    else:
        d1, d2 = (np.asarray(a, dtype=float) for a in dual)
    # inner pass over the second coordinate for every first-coordinate row
    H, idx2 = _lft_axis(x2, m.values.T, d2, refine, method)      # (k2, n1)
    if strict:
        _saturation(idx2, d2, x2, len(x2), False, " (axis 1)")
    G, idx1 = _lft_axis(x1, -H.T, d1, refine, method)          # (k1, k2)
    if strict:
        _saturation(idx1, d1, x1, len(x1), False, " (axis 0)")
    return TabulatedConvexFunction((d1, d2), G, meta={"transform": "conjugate"})


def _hull_slopes(x, f, even):
    """Chord slopes of the lower convex hull of the samples (mirrored if even)."""
    if even:
        xx = np.concatenate([-x[:0:-1], x])
        ff = np.concatenate([f[:0:-1], f])
    else:
        xx, ff = x, f
    h = lower_convex_hull(xx, ff)
    slopes = np.diff(h) / np.diff(xx)
    if even:
        slopes = np.concatenate([[0.0], slopes[slopes >= 0]])
    return np.unique(slopes)


def biconjugate(m, dual=None, *, strict=False, refine=None, method="brute"):
    """Convex envelope ``m**`` on the primal grid of ``m`` (two Legendre passes).

    In 1D the default dual grid consists of the chord slopes of the lower
    hull of the samples; with refinement off (the default there) both passes
    are then exact for the piecewise-linear interpolant, so convex data is
    reproduced to rounding error.
    """
    if isinstance(m, ScalarNFunction):
        m = tabulate(m, log_linear_grid())
    if m.ndim == 1 and dual is None:
        dual = _hull_slopes(m.axes[0], m.values, m.even)
        if len(dual) < 2:
            dual = np.array([dual[0], dual[0] + 1.0])
        refine = False if refine is None else refine
    refine = True if refine is None else refine
    star = conjugate(m, dual=dual, strict=strict, refine=refine, method=method)
    back_dual = m.axes[0] if m.ndim == 1 else m.axes
    out = conjugate(star, dual=back_dual, strict=False, refine=refine, method=method)
    # the envelope never exceeds the data; clip refinement overshoot at kinks
    vals = np.minimum(out.values, m.values)
    return TabulatedConvexFunction(m.axes, vals, even=m.even, meta={"transform": "biconjugate"})


# ---------------------------------------------------------------------------
# modulars and norms


def _field_on(grid, v, at):
    shape = grid.shape if at == "nodes" else grid.element_shape
    v = grid.check_field(np.asarray(v, dtype=float), at)
    n = int(np.prod(shape))
    return v.reshape((n,) + v.shape[len(shape):])


def _points(grid, at):
    return grid.node_points() if at == "nodes" else grid.element_points()


def _weights(grid, at):
    return grid.node_weights() if at == "nodes" else grid.element_weights()


def modular(M, v, grid, at="nodes", scale=1.0):
    """Modular ``integral of M(x/scale, v(x)) dx`` over the grid.

    Args:
        M: :class:`NFunction` (evaluated at ``y = x/scale``) or
            :class:`ScalarNFunction` (evaluated at ``|v|``).
        v: field on the grid; scalar fields are treated as ``m = 1``.
        grid: periodic or box grid.
        at: ``"nodes"`` or ``"elements"``.
        scale: the period ``eps`` of the oscillation (1 on the unit cell).
    """
    flat = _field_on(grid, v, at)
    if flat.ndim == 1:
        flat = flat[:, None]
    flat = flat.reshape(flat.shape[0], -1)
    w = _weights(grid, at)
    if isinstance(M, ScalarNFunction):
        vals = M(np.sqrt(np.sum(flat**2, axis=-1)))
    else:
        y = _points(grid, at) / scale
        with np.errstate(over="ignore"):
            vals = M(y, flat)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.dot(w, vals))


def luxemburg_norm(M, v, grid, tol=1e-10, at="nodes", scale=1.0, max_doublings=200):
    """Luxemburg norm ``inf{lam > 0 : modular(v / lam) <= 1}`` by bracketing and bisection."""
    flat = _field_on(grid, v, at)
    if not np.any(flat):
        return 0.0
    phi = lambda lam: modular(M, np.asarray(v) / lam, grid, at, scale)  # noqa: E731
    hi = float(np.max(np.abs(flat))) or 1.0
    for _ in range(max_doublings):
        val = phi(hi)
        if np.isfinite(val) and val <= 1:
            break
        hi *= 2
    else:
        raise RuntimeError("Luxemburg bracket expansion failed: modular stays above 1 or infinite")
    lo = hi
    for _ in range(max_doublings):
        val = phi(lo)
        if not np.isfinite(val) or val >= 1:
            break
        lo /= 2
    else:
        raise RuntimeError("Luxemburg bracket expansion failed towards 0")
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        val = phi(mid)
        if np.isfinite(val) and abs(val - 1) <= tol:
            return float(mid)
        if not np.isfinite(val) or val > 1:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return float(hi)
