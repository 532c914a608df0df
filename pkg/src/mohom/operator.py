"""Monotone operator models ``A(y, xi)`` and sampled coercivity/monotonicity checks."""

from __future__ import annotations

import numpy as np

from .coefficients import make_coefficient
from .conditions import Report, _directions, y_lattice
from .nfunction import (
    NFunction,
    RangeError,
    TabulatedConvexFunction,
    conjugate,
    make_nfunction,
)


class MonotoneOperator:
    """Y-periodic monotone map ``A(y, xi)`` with an attached growth gauge ``M``.

    Args:
        flux: callable ``(y, xi) -> A`` with trailing axis ``m``.
        jacobian: callable ``(y, xi) -> dA/dxi`` with trailing shape ``(m, m)``.
        gauge: the N-function controlling growth and coercivity.
        structure: ``"gradient"`` (then ``A = grad_xi gauge``) or ``"monotone"``.
        potential: energy density whose gradient is ``A`` (gradient operators).
        odd: whether ``A(y, -xi) = -A(y, xi)``.
    """

    def __init__(self, flux, jacobian, gauge, structure="gradient", potential=None,
                 name="", odd=True, config=None):
        if structure not in ("gradient", "monotone"):
            raise ValueError(f"unknown operator structure {structure!r}")
        if structure == "gradient" and potential is None:
            raise ValueError("gradient operators need a potential")
        self._flux = flux
        self._jac = jacobian
        self.gauge = gauge
        self.structure = structure
        self.potential = potential
        self.name = name or structure
        self.odd = odd
        self.config = config

    @property
    def is_gradient(self):
        return self.structure == "gradient"

    @property
    def spatially_constant(self):
        return bool(getattr(self.gauge, "spatially_constant", False)) and (
            self.config or {}).get("family") != "rotated-linear"

    def __call__(self, y, xi):
        return self._flux(np.asarray(y, dtype=float), np.asarray(xi, dtype=float))

    def jacobian(self, y, xi):
        return self._jac(np.asarray(y, dtype=float), np.asarray(xi, dtype=float))

    def energy_density(self, y, xi):
        if self.potential is None:
            raise TypeError("general monotone operators carry no energy density")
        return self.potential(y, xi)

    def __repr__(self):
        return f"MonotoneOperator({self.name}, {self.structure})"


def gradient_operator(M: NFunction, name="", config=None) -> MonotoneOperator:
    """The operator ``A = grad_xi M`` of an N-function."""
    return MonotoneOperator(M.gradient, M.hessian, M, "gradient", potential=M,
                            name=name or f"grad {M.name}", odd=True, config=config)


def _rotated_linear(cfg):
    a = make_coefficient(cfg.get("a", 1.0))
    b = make_coefficient(cfg.get("b", 0.0))
    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def flux(y, xi):
        if xi.shape[-1] != 2:
            raise ValueError("the rotated-linear family acts on R^2")
        return a(y)[..., None] * xi + b(y)[..., None] * (xi @ J.T)

    def jac(y, xi):
        return a(y)[..., None, None] * np.eye(2) + b(y)[..., None, None] * J

    gauge = make_nfunction({"family": "weighted_power", "p": 2, "weight": a.to_config()})
    return MonotoneOperator(flux, jac, gauge, "monotone", name="rotated-linear", odd=True,
                            config=cfg)


_ALIASES = {"p_weighted": "p-weighted", "variable_exponent": "variable-exponent",
            "rotated_linear": "rotated-linear"}


def make_operator(config) -> MonotoneOperator:
    """Build an operator from a declarative record.

    Families (``family`` key)::

        linear             a                    A = a(y) xi
        p-weighted         p, a                 A = a(y) |xi|^(p-2) xi
        variable-exponent  p (coefficient), a   A = a(y) |xi|^(p(y)-2) xi
        gradient           nfunction: {...}     A = grad_xi M
        rotated-linear     a, b  (m = 2)        A = a(y) xi + b(y) J xi, J a quarter turn
    """
    if isinstance(config, MonotoneOperator):
        return config
    if not isinstance(config, dict) or "family" not in config:
        raise ValueError("operator config must be a mapping with a 'family' key")
    cfg = dict(config)
    fam = _ALIASES.get(cfg["family"], cfg["family"])
    cfg["family"] = fam
    if fam == "linear":
        M = make_nfunction({"family": "weighted_power", "p": 2,
                            "weight": make_coefficient(cfg.get("a", 1.0)).to_config()})
        return gradient_operator(M, "linear", cfg)
    if fam == "p-weighted":
        M = make_nfunction({"family": "weighted_power", "p": float(cfg["p"]),
                            "weight": make_coefficient(cfg.get("a", 1.0)).to_config()})
        return gradient_operator(M, f"p-weighted(p={cfg['p']})", cfg)
    if fam == "variable-exponent":
        M = make_nfunction({"family": "variable_exponent",
                            "p": make_coefficient(cfg["p"]).to_config(),
                            "weight": make_coefficient(cfg.get("a", 1.0)).to_config()})
        return gradient_operator(M, "variable-exponent", cfg)
    if fam == "gradient":
        if "nfunction" not in cfg:
            raise ValueError("gradient family needs an 'nfunction' record")
        return gradient_operator(make_nfunction(cfg["nfunction"]), "gradient", cfg)
    if fam == "rotated-linear":
        return _rotated_linear(cfg)
    raise ValueError(f"unknown operator family {cfg['family']!r}")


def _radial_conjugate_at(gauge, y, s, n=4001):
    """``gauge*(y, .)`` at the dual radii ``s`` from a log-spaced tabulated slice."""
    smax = max(float(np.max(s)), 1e-12)
    top = 1.0
    while gauge.profile(y, top, order=1) < smax:
        top *= 2
    while top > 1e-12 and gauge.profile(y, top / 2, order=1) >= smax:
        top /= 2
    t = np.concatenate([[0.0], np.geomspace(1e-9 * top, 1.5 * top, n)])
    tab = TabulatedConvexFunction((t,), gauge.profile(y, t), even=True)
    dual = np.unique(np.concatenate([[0.0], s]))
    return conjugate(tab, dual=dual, strict=True)(s)


def _coercivity_inf(op, d, m, n_y, ts, dual_radius):
    ys = y_lattice(d, n_y)
    dirs = _directions(op.gauge, m) if op.is_gradient else np.array(
        [np.eye(m)[k] for k in range(m)] + ([np.ones(m) / np.sqrt(m)] if m > 1 else []))
    xi = (ts[:, None, None] * dirs[None, :, :]).reshape(-1, m)
    best, arg = np.inf, None
    for y in ys:
        A = op(y, xi)
        lhs = np.sum(A * xi, axis=-1)
        Mv = op.gauge(y, xi)
        s = np.sqrt(np.sum(A**2, axis=-1))
        if dual_radius is not None and np.any(s > dual_radius):
            k = int(np.argmax(s))
            raise RangeError(f"A(y, xi) with |A| = {s[k]:.6g} at y = {y.tolist()}, "
                             f"xi = {xi[k].tolist()} exceeds the dual tabulation radius "
                             f"{dual_radius}")
        if getattr(op.gauge, "radial", True):
            Ms = _radial_conjugate_at(op.gauge, y, s)
        else:
            Ms = op.gauge.conj(y, A)
        ratio = lhs / (Mv + Ms)
        k = int(np.argmin(ratio))
        if ratio[k] < best:
            best = float(ratio[k])
            arg = {"y": y.tolist(), "xi": xi[k].tolist(), "ratio": best}
    return best, arg


def verify_coercivity_A3(op, d=1, m=1, n_y=16, t_min=1e-3, t_max=1e2, n_t=41,
                         dual_radius=None, stable_rtol=0.05):
    """Fit ``c = inf A.xi / (M(y, xi) + M*(y, A(y, xi)))`` over a sample lattice.

    ``xi = 0`` is excluded.  The fit is repeated on a y-lattice twice as fine;
    the check passes when ``c > 0`` and the two fits agree within
    ``stable_rtol``.
    """
    m = getattr(op.gauge, "m", None) or m
    ts = np.geomspace(t_min, t_max, n_t)
    c1, _ = _coercivity_inf(op, d, m, n_y, ts, dual_radius)
    c2, arg = _coercivity_inf(op, d, m, 2 * n_y, ts, dual_radius)
    drift = abs(c2 - c1) / max(abs(c2), 1e-300)
    passes = bool(c2 > 0 and drift <= stable_rtol)
    return Report("A3", passes, {"fitted_c": c2, "coarse_c": c1, "relative_drift": drift},
                  arg)


def verify_monotonicity_A4(op, d=1, m=1, n_y=8, t_min=1e-3, t_max=1e3, n_t=25):
    """Minimum of ``(A(y, xi) - A(y, eta)) . (xi - eta) / |xi - eta|**2`` over sample pairs.

    Pairs where ``A`` overflows are skipped and counted in ``n_skipped``.
    """
    m = getattr(op.gauge, "m", None) or m
    ts = np.geomspace(t_min, t_max, n_t)
    dirs = [np.eye(m)[k] for k in range(m)]
    if m > 1:
        dirs.append(np.ones(m) / np.sqrt(m))
    dirs = np.array(dirs)
    vecs = (ts[:, None, None] * dirs[None]).reshape(-1, m)
    vecs = np.concatenate([vecs, -vecs, np.zeros((1, m))])
    i, j = np.triu_indices(len(vecs), k=1)
    diff = vecs[i] - vecs[j]
    keep = np.sum(diff**2, axis=-1) > 0
    i, j, diff = i[keep], j[keep], diff[keep]
    best, arg = np.inf, None
    raw_min = np.inf
    skipped = 0
    for y in y_lattice(d, n_y):
        with np.errstate(over="ignore", invalid="ignore"):
            A = op(y, vecs)
            inner = np.sum((A[i] - A[j]) * diff, axis=-1)
        finite = np.all(np.isfinite(A), axis=-1)
        ok = finite[i] & finite[j]
        skipped += int(np.sum(~ok))
        inner = np.where(ok, inner, np.inf)
        norm2 = np.sum(diff**2, axis=-1)
        q = inner / norm2
        k = int(np.argmin(q))
        raw_min = min(raw_min, float(np.min(inner)))
        if q[k] < best:
            best = float(q[k])
            arg = {"y": y.tolist(), "xi": vecs[i[k]].tolist(), "eta": vecs[j[k]].tolist(),
                   "inner": float(inner[k])}
    return Report("A4", bool(best > 0),
                  {"min_normalized": best, "min_inner_product": raw_min, "n_skipped": skipped},
                  arg)
