"""Damped Newton solver for element-wise flux balances.

Both the cell problem and the Dirichlet problems reduce to: find nodal
values ``x`` (the free degrees of freedom) such that for every free node

    sum_e w_e (A(y_e, g_e(x)) - F_e) . (G phi)_e = 0,   g_e(x) = xi_e + (G x)_e,

where ``G`` maps nodal values to element gradients.  For gradient operators
this is the first-order condition of the convex energy
``E(x) = sum_e w_e (M(y_e, g_e) - F_e . g_e)``, and the line search works on
``E``; otherwise it works on the squared residual.

Globalisation, in order:

1. Newton with Armijo backtracking and an adaptive Levenberg shift that only
   switches on when the Jacobian is singular or the step is not a descent
   direction (degenerate Hessians of p > 2 growth at vanishing gradients).
2. Continuation over the regularised operator ``A + delta * s * xi`` for a
   decreasing ``delta`` schedule, each stage warm-started, followed by an
   unregularised polish.
3. If the polish stalls, iterations with the Jacobian frozen at the smallest
   ``delta`` (reported as ``delta_floor_bound``).
4. Nonlinear conjugate gradients on the energy (gradient operators only).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize


class ConvergenceError(RuntimeError):
    """Raised when every strategy fails; carries the best residual reached."""

    def __init__(self, message, best_residual=np.inf, x=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.x = x


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and globalisation parameters.

    Args:
        tol: target sup-norm of the scaled weak-form residual.
        max_iter: Newton iterations per stage.
        armijo: sufficient-decrease constant.
        max_backtracks: step halvings per iteration.
        delta_schedule: regularisation levels for the continuation stage.
        continuation: enable stage 2 and 3.
        fallback_ncg: enable stage 4.
    """

    tol: float = 1e-10
    max_iter: int = 100
    armijo: float = 1e-4
    max_backtracks: int = 60
    delta_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    continuation: bool = True
    fallback_ncg: bool = True

    def with_tol(self, tol):
        return replace(self, tol=float(tol))


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    strategy: str = "newton"
    delta_floor_bound: bool = False
    history: list = field(default_factory=list)


class FluxSystem:
    """Discrete flux balance on a grid.

    Args:
        op: :class:`~mohom.operator.MonotoneOperator`.
        G: scalar element-gradient matrix ``(n_elements * d, n_nodes)``.
        weights: element quadrature weights.
        y: element sample points passed to the operator (fast variable).
        N: number of field components.
        free: indices of free nodes; the others are held at zero.
        shift: constant or element-wise macroscopic gradient, shape ``(m,)`` or
            ``(n_elements, m)``.
        load: constant or element-wise ``F``, same shapes as ``shift``.
        residual_scale: divisor turning the nodal residual into flux units.
    """

    def __init__(self, op, G, weights, y, N, free, shift=None, load=None, residual_scale=1.0):
        self.op = op
        self.N = int(N)
        self.nE = len(weights)
        self.d = G.shape[0] // self.nE
        self.m = self.d * self.N
        self.n_nodes = G.shape[1]
        self.w = np.asarray(weights, dtype=float)
        self.y = np.asarray(y, dtype=float)
        Gf = sp.kron(G, sp.identity(self.N, format="csr"), format="csr") if self.N > 1 else G.tocsr()
        self.G_full = Gf
        free = np.asarray(free)
        cols = (free[:, None] * self.N + np.arange(self.N)[None, :]).ravel()
        self.cols = cols
        self.G = Gf[:, cols].tocsr()
        self.GT = self.G.T.tocsr()
        self.shift = self._elementwise(shift)
        self.load = self._elementwise(load)
        self.residual_scale = float(residual_scale)
        self.has_energy = op.is_gradient
        R = max(1.0, float(np.max(np.abs(self.shift))), float(np.max(np.abs(self.load))))
        e = np.zeros(self.m)
        e[0] = R
        with np.errstate(over="ignore"):
            gv = op.gauge(self.y, e)
        self.reg_scale = float(max(np.max(2 * gv / R**2), 1e-300))
        wl = sp.diags(np.repeat(self.w, self.m))
        self.laplacian = (self.GT @ wl @ self.G).tocsc()

    def _elementwise(self, v):
        if v is None:
            return np.zeros((self.nE, self.m))
        v = np.asarray(v, dtype=float)
        if v.ndim <= 1:
            return np.broadcast_to(v.reshape(-1)[: self.m] if v.size == self.m else v,
                                   (self.nE, self.m)).copy()
        return v.reshape(self.nE, self.m)

    @property
    def n_free(self):
        return len(self.cols)

    def expand(self, x):
        full = np.zeros(self.n_nodes * self.N)
        full[self.cols] = x
        return full

    def gradients(self, x):
        return (self.G @ x).reshape(self.nE, self.m) + self.shift

    def flux(self, g, delta=0.0):
        A = self.op(self.y, g)
        if delta:
            A = A + delta * self.reg_scale * g
        return A

    def residual(self, x, delta=0.0):
        g = self.gradients(x)
        return self.GT @ (self.w[:, None] * (self.flux(g, delta) - self.load)).ravel()

    def full_residual(self, x):
        g = self.gradients(x)
        return self.G_full.T @ (self.w[:, None] * (self.flux(g) - self.load)).ravel()

    def residual_norm(self, r):
        return float(np.max(np.abs(r))) / self.residual_scale if r.size else 0.0

    def energy(self, x, delta=0.0):
        g = self.gradients(x)
        with np.errstate(over="ignore", invalid="ignore"):
            dens = self.op.energy_density(self.y, g) - np.sum(self.load * g, axis=-1)
            if delta:
                dens = dens + 0.5 * delta * self.reg_scale * np.sum(g * g, axis=-1)
            return float(np.dot(self.w, dens))

    def jacobian(self, x, delta=0.0):
        g = self.gradients(x)
        J = self.op.jacobian(self.y, g)
        if delta:
            J = J + delta * self.reg_scale * np.eye(self.m)
        J = self.w[:, None, None] * J.reshape(self.nE, self.m, self.m)
        if self.m == 1:
            B = sp.diags(J[:, 0, 0])
        else:
            B = sp.bsr_matrix((J, np.arange(self.nE), np.arange(self.nE + 1)),
                              shape=(self.nE * self.m, self.nE * self.m))
        return (self.GT @ B @ self.G).tocsc()


def _solve_linear(H, rhs):
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        try:
            dx = spla.spsolve(H, rhs)
        except Exception:  # singular factorization
            return None
    if not np.all(np.isfinite(dx)):
        return None
    return dx


def _newton(system, x, cfg, delta=0.0, frozen_delta=None, tol=None):
    """One Newton stage; returns a :class:`SolveResult` (never raises)."""
    tol = cfg.tol if tol is None else tol
    use_energy = system.has_energy
    mu = 0.0
    history = []
    r = system.residual(x, delta)
    rn = system.residual_norm(r)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if not np.isfinite(rn):
            break
        if rn <= tol:
            return SolveResult(x, rn, it - 1, True, history=history)
        jd = delta if frozen_delta is None else frozen_delta
        H = system.jacobian(x, jd)
        accepted = False
        for _ in range(12):
            Hs = H if mu == 0 else (H + mu * system.reg_scale * system.laplacian).tocsc()
            dx = _solve_linear(Hs, -r)
            slope = float(np.dot(r, dx)) if dx is not None else np.inf
            if dx is None or (use_energy and slope >= 0):
                mu = max(1e-10, 10 * mu)
                continue
            accepted = True
            break
        if not accepted:
            break
        if use_energy:
            E0 = system.energy(x, delta)
            tiny = abs(slope) <= 1e-13 * (1.0 + abs(E0))
        else:
            E0 = 0.5 * float(np.dot(r, r))
            slope = -2 * E0
            tiny = E0 <= 1e-26
        alpha, x_new, r_new, rn_new = 1.0, None, None, None
        for _ in range(cfg.max_backtracks + 1):
            xt = x + alpha * dx
            rt = system.residual(xt, delta)
            rnt = system.residual_norm(rt)
            if tiny:
                ok = np.isfinite(rnt) and rnt < rn
            elif use_energy:
                Et = system.energy(xt, delta)
                ok = np.isfinite(Et) and Et <= E0 + cfg.armijo * alpha * slope
            else:
                Et = 0.5 * float(np.dot(rt, rt))
                ok = np.isfinite(Et) and Et <= E0 + cfg.armijo * alpha * slope
            if ok:
                x_new, r_new, rn_new = xt, rt, rnt
                break
            alpha *= 0.5
        if x_new is None:
            if mu < 1e6:
                mu = max(1e-10, 100 * mu)
                history.append((it, rn, 0.0, mu))
                continue
            break
        history.append((it, rn_new, alpha, mu))
        if alpha == 1.0:
            mu = 0.0 if mu <= 1e-9 else mu / 10
        x, r, rn = x_new, r_new, rn_new
    return SolveResult(x, rn, it, rn <= tol, history=history)


def solve(system: FluxSystem, x0=None, cfg: SolverConfig | None = None) -> SolveResult:
    """Solve the flux balance with the staged globalisation described above."""
    cfg = cfg or SolverConfig()
    x0 = np.zeros(system.n_free) if x0 is None else np.asarray(x0, dtype=float)
    best = _newton(system, x0.copy(), cfg)
    if best.converged:
        return best
    candidates = [best]
    if cfg.continuation and cfg.delta_schedule:
        x = x0.copy()
        for delta in cfg.delta_schedule:
            stage = _newton(system, x, cfg, delta=delta)
            x = stage.x
        final = _newton(system, x, cfg)
        final.strategy = "continuation"
        if final.converged:
            return final
        candidates.append(final)
        floor = min(cfg.delta_schedule)
        frozen = _newton(system, final.x, replace(cfg, max_iter=20 * cfg.max_iter),
                         frozen_delta=floor)
        frozen.strategy = "continuation"
        frozen.delta_floor_bound = True
        if frozen.converged:
            return frozen
        candidates.append(frozen)
    if cfg.fallback_ncg and system.has_energy:
        start = min(candidates, key=lambda c: c.residual).x

        def fun(z):
            return system.energy(z), system.residual(z)

        res = minimize(fun, start, jac=True, method="CG",
                       options={"gtol": cfg.tol * system.residual_scale, "maxiter": 20000})
        rn = system.residual_norm(system.residual(res.x))
        cand = SolveResult(res.x, rn, int(res.nit), rn <= cfg.tol, strategy="ncg")
        if cand.converged:
            return cand
        candidates.append(cand)
    worst = min(candidates, key=lambda c: c.residual)
    raise ConvergenceError(
        f"solver did not reach tol {cfg.tol:g}; best residual {worst.residual:.3e}",
        best_residual=worst.residual, x=worst.x)
