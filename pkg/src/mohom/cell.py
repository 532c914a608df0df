"""Periodic cell problem, homogenized operator and effective potential.

For a macroscopic gradient ``xi`` the corrector ``w`` is the mean-zero
periodic nodal field solving the discrete weak form
``sum_e w_e A(y_e, xi + (G w)_e) . (G phi)_e = 0``; the homogenized flux is
the cell average of ``A(y, xi + grad w)`` and, for gradient operators, the
effective potential ``f(xi)`` is the minimal cell energy.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import PchipInterpolator

from . import io as _io
from .nfunction import RangeError, TabulatedConvexFunction, conjugate
from .operator import MonotoneOperator, gradient_operator, make_operator
from .pgrid import PeriodicGrid
from .solver import ConvergenceError, FluxSystem, SolverConfig, solve


def _as_xi(xi, d, N=None):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 2:
        if xi.shape[0] != d:
            raise ValueError(f"xi of shape {xi.shape} does not match d = {d}")
        return xi.reshape(-1), xi.shape[1]
    xi = np.atleast_1d(xi).reshape(-1)
    if N is None:
        if xi.size % d:
            raise ValueError(f"xi of size {xi.size} is not a d x N matrix with d = {d}")
        N = xi.size // d
    if xi.size != d * N:
        raise ValueError(f"xi of size {xi.size} does not match d*N = {d * N}")
    return xi, N


@dataclass
class CellSolution:
    """Result of one cell solve (fields on the periodic grid, element gradients)."""

    xi: np.ndarray
    corrector: np.ndarray
    corrector_gradient: np.ndarray
    hat_A: np.ndarray
    energy: float | None
    residual: float
    iterations: int
    strategy: str = "newton"
    delta_floor_bound: bool = False
    N: int = 1

    def summary(self):
        return {"xi": self.xi.tolist(), "hat_A": self.hat_A.tolist(), "energy": self.energy,
                "residual": self.residual, "iterations": self.iterations,
                "strategy": self.strategy, "delta_floor_bound": self.delta_floor_bound}

    def save(self, path, grid):
        pts = grid.node_points()
        cols = {f"y{k + 1}": pts[:, k] for k in range(grid.d)}
        w = self.corrector.reshape(grid.n_nodes, -1)
        for k in range(w.shape[1]):
            cols[f"w{k + 1}"] = w[:, k]
        return _io.write_table(path, cols, {"kind": "cell_solution", **self.summary()})


def _cell_system(op, xi, grid, N):
    G = grid.gradient_matrix()
    free = np.arange(1, grid.n_nodes)
    return FluxSystem(op, G, grid.element_weights(), grid.element_points(), N, free,
                      shift=xi, residual_scale=grid.h ** (grid.d - 1))


def solve_cell(op: MonotoneOperator, xi, grid: PeriodicGrid, config: SolverConfig | None = None,
               N=None, x0=None) -> CellSolution:
    """Solve the cell problem for the macroscopic gradient ``xi``.

    Args:
        op: monotone operator.
        xi: macroscopic gradient, a ``(d, N)`` matrix or its row-major flattening.
        grid: periodic grid on the unit cell.
        config: solver configuration (default residual tolerance ``1e-10`` in
            1D and ``1e-8`` in 2D).
        N: number of components (inferred from ``xi`` when omitted).
        x0: optional warm start (free nodal values).

    Raises:
        ConvergenceError: when no strategy reaches the tolerance.
    """
    if not grid.periodic:
        raise ValueError("the cell problem lives on a periodic grid")
    if config is None:
        config = SolverConfig(tol=1e-10 if grid.d == 1 else 1e-8)
    xi_flat, N = _as_xi(xi, grid.d, N)
    system = _cell_system(op, xi_flat, grid, N)
    res = solve(system, x0, config)
    full = system.expand(res.x).reshape(grid.n_nodes, N)
    full -= full.mean(axis=0, keepdims=True)
    grads = system.gradients(res.x)
    w = system.w
    A = op(system.y, grads)
    hat_A = np.tensordot(w, A, axes=(0, 0)) / np.sum(w)
    energy = None
    if op.is_gradient:
        energy = float(np.dot(w, op.energy_density(system.y, grads)))
    resid = system.residual_norm(system.full_residual(res.x))
    corr_grad = (grads - xi_flat[None, :]).reshape(grid.element_shape + (grid.d, N))
    return CellSolution(xi_flat.copy(), full.reshape(grid.shape + (N,)), corr_grad, hat_A,
                        energy, resid, res.iterations, res.strategy, res.delta_floor_bound, N)


# ---------------------------------------------------------------------------
# tables of the homogenized operator


def polar_nodes(radii, n_angles):
    """Nodes ``r (cos th, sin th)`` for every radius and ``n_angles`` equispaced angles.

    Returns:
        ``(n_r * n_angles, 2)`` array; the origin is included once if ``radii[0] == 0``.
    """
    radii = np.asarray(radii, dtype=float)
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    pts = [np.zeros(2)] if radii[0] == 0 else []
    for r in radii[radii > 0]:
        pts.extend(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    return np.array(pts)


def _key(v):
    return tuple(np.round(np.asarray(v, dtype=float), 12).tolist())


def _cell_task(args):
    op_cfg, xi, d, K, cfg, N = args
    op = make_operator(op_cfg)
    try:
        sol = solve_cell(op, xi, PeriodicGrid(d, K), cfg, N)
        return sol.hat_A, sol.energy, sol.residual, sol.iterations, "converged", sol.strategy
    except ConvergenceError as exc:
        return None, None, exc.best_residual, 0, "failed", str(exc)


def _solve_nodes(op, nodes, grid, config, N, workers):
    """Solve cell problems at ``nodes`` (rows), reflecting through ``-xi`` when ``op`` is odd."""
    todo, mirror = [], {}
    seen = {}
    for i, x in enumerate(nodes):
        k = _key(x)
        if k in seen:
            mirror[i] = (seen[k], 1.0)
            continue
        nk = _key(-x)
        if op.odd and nk in seen:
            mirror[i] = (seen[nk], -1.0)
            continue
        seen[k] = i
        todo.append(i)
    n, m = nodes.shape
    hat = np.full((n, m), np.nan)
    energy = np.full(n, np.nan)
    resid = np.full(n, np.nan)
    iters = np.zeros(n, dtype=int)
    status = ["failed"] * n
    jobs = [(op.config, nodes[i], grid.d, grid.K, config, N) for i in todo]
    if workers and workers > 1 and op.config is not None and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, jobs))
    else:
        results = []
        for i in todo:
            try:
                s = solve_cell(op, nodes[i], grid, config, N)
                results.append((s.hat_A, s.energy, s.residual, s.iterations, "converged",
                                s.strategy))
            except ConvergenceError as exc:
                results.append((None, None, exc.best_residual, 0, "failed", str(exc)))
    for i, (hA, en, rs, it, st, _) in zip(todo, results):
        if hA is not None:
            hat[i] = hA
            energy[i] = np.nan if en is None else en
        resid[i], iters[i], status[i] = rs, it, st
    for i, (j, sign) in mirror.items():
        hat[i] = sign * hat[j]
        energy[i] = energy[j]
        resid[i], iters[i] = resid[j], 0
        status[i] = "reflected" if status[j] != "failed" else "failed"
    return hat, energy, resid, iters, status


@dataclass
class EffectiveOperatorTable:
    """Tabulated homogenized operator with an interpolant.

    Layouts: ``line`` (m = 1, sorted nodes, PCHIP), ``polar`` (m = 2, PCHIP
    along rays and periodic cubic in the angle), ``cartesian`` (m = 2, bilinear).
    """

    layout: str
    nodes: np.ndarray
    hat_A: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    status: list
    energy: np.ndarray
    radii: np.ndarray | None = None
    n_angles: int | None = None
    axes: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._build()

    @property
    def m(self):
        return self.nodes.shape[1]

    @property
    def failures(self):
        return [i for i, s in enumerate(self.status) if s == "failed"]

    @property
    def radius(self):
        return float(np.max(np.sqrt(np.sum(self.nodes**2, axis=-1))))

    def _build(self):
        ok = np.array([s != "failed" for s in self.status])
        if self.layout == "line":
            x = self.nodes[ok, 0]
            order = np.argsort(x)
            self._lo, self._hi = float(x[order[0]]), float(x[order[-1]])
            self._interp = PchipInterpolator(x[order], self.hat_A[ok][order], axis=0)
            self._dinterp = self._interp.derivative()
        elif self.layout == "polar":
            if not ok.all():
                raise ValueError("polar tables need every node; re-run failed nodes first")
            r = self.radii
            na = self.n_angles
            vals = self.hat_A[1:].reshape(len(r) - 1, na, 2)        # (nr-1, na, 2)
            zero = np.broadcast_to(self.hat_A[0], (1, na, 2))
            vals = np.concatenate([zero, vals], axis=0)              # (nr, na, 2)
            self._ray = [PchipInterpolator(r, vals[:, k, :], axis=0) for k in range(na)]
            self._lo, self._hi = 0.0, float(r[-1])
        elif self.layout == "cartesian":
            if not ok.all():
                raise ValueError("cartesian tables need every node")
            a1, a2 = self.axes
            self._grid_vals = self.hat_A.reshape(len(a1), len(a2), 2)
        else:
            raise ValueError(f"unknown table layout {self.layout!r}")

    def _check(self, xi):
        if self.layout == "line":
            x = xi[..., 0]
            slack = 1e-12 * max(1.0, abs(self._hi))
            if np.any(x < self._lo - slack) or np.any(x > self._hi + slack):
                bad = x[(x < self._lo - slack) | (x > self._hi + slack)].ravel()[0]
                raise RangeError(f"gradient {bad:.6g} outside the table range "
                                 f"[{self._lo:.6g}, {self._hi:.6g}]; extend the table")
        elif self.layout == "polar":
            r = np.sqrt(np.sum(xi**2, axis=-1))
            if np.any(r > self._hi * (1 + 1e-12)):
                raise RangeError(f"gradient norm {float(r.max()):.6g} exceeds the table radius "
                                 f"{self._hi:.6g}; extend the table")
        else:
            a1, a2 = self.axes
            if (np.any(xi[..., 0] < a1[0]) or np.any(xi[..., 0] > a1[-1])
                    or np.any(xi[..., 1] < a2[0]) or np.any(xi[..., 1] > a2[-1])):
                raise RangeError("gradient outside the cartesian table; extend the table")

    def __call__(self, xi, check=True):
        """Interpolated ``hat A(xi)``.

        With ``check=False`` points outside the table are continued linearly
        along the radial direction (used for trial iterates of solvers; final
        gradients should always be checked).
        """
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.m:
            raise ValueError(f"expected trailing dimension {self.m}")
        if check:
            self._check(xi)
            return self._eval(xi)
        if self.layout == "line":
            x = xi[..., 0]
            lo, hi = self._lo, self._hi
            xc = np.clip(x, lo, hi)
            d_lo, d_hi = float(self._dinterp(lo)[0]), float(self._dinterp(hi)[0])
            slope = np.where(x > hi, d_hi, np.where(x < lo, d_lo, 0.0))
            return self._interp(xc) + ((x - xc) * slope)[..., None]
        if self.layout == "polar":
            r = np.sqrt(np.sum(xi**2, axis=-1, keepdims=True))
            hi = self._hi
            out_ = r > hi
            if not np.any(out_):
                return self._eval(xi)
            scale = np.where(out_, hi / np.maximum(r, 1e-300), 1.0)
            xc = xi * scale
            inner = xc * (1 - 1e-3)
            A_hi = self._eval(xc)
            A_in = self._eval(inner)
            dA = (A_hi - A_in) / (1e-3 * hi)
            return A_hi + (r - np.minimum(r, hi)) * dA
        a1, a2 = self.axes
        xc = np.stack([np.clip(xi[..., 0], a1[0], a1[-1]), np.clip(xi[..., 1], a2[0], a2[-1])],
                      axis=-1)
        return self._eval(xc)

    def _eval(self, xi):
        if self.layout == "line":
            return self._interp(xi[..., 0])
        if self.layout == "polar":
            return self._polar(xi)
        return self._bilinear(xi)

    def _polar(self, xi):
        # PCHIP along rays; in angle, periodic 4-point cubic interpolation of the
        # radial and tangential components, each taken in the frame of its ray
        r = np.sqrt(np.sum(xi**2, axis=-1))
        th = np.mod(np.arctan2(xi[..., 1], xi[..., 0]), 2 * np.pi)
        na = self.n_angles
        s = th / (2 * np.pi) * na
        k = np.floor(s).astype(int) % na
        f = (s - np.floor(s)).ravel()
        flat_r, flat_k, flat_th = r.ravel(), k.ravel(), th.ravel()
        weights = (-f * (f - 1) * (f - 2) / 6, (f + 1) * (f - 1) * (f - 2) / 2,
                   -(f + 1) * f * (f - 2) / 2, (f + 1) * f * (f - 1) / 6)
        rad = np.zeros(flat_r.shape)
        tan = np.zeros(flat_r.shape)
        for kk in np.unique(flat_k):
            sel = flat_k == kk
            for j, w in zip((-1, 0, 1, 2), weights):
                ray = (kk + j) % na
                phi = 2 * np.pi * ray / na
                v = self._ray[ray](flat_r[sel])
                rad[sel] += w[sel] * (v[:, 0] * np.cos(phi) + v[:, 1] * np.sin(phi))
                tan[sel] += w[sel] * (-v[:, 0] * np.sin(phi) + v[:, 1] * np.cos(phi))
        c, sn = np.cos(flat_th), np.sin(flat_th)
        out = np.stack([rad * c - tan * sn, rad * sn + tan * c], axis=-1)
        return out.reshape(xi.shape)

    def _bilinear(self, xi):
        a1, a2 = self.axes
        V = self._grid_vals
        i = np.clip(np.searchsorted(a1, xi[..., 0], side="right") - 1, 0, len(a1) - 2)
        j = np.clip(np.searchsorted(a2, xi[..., 1], side="right") - 1, 0, len(a2) - 2)
        f = ((xi[..., 0] - a1[i]) / (a1[i + 1] - a1[i]))[..., None]
        g = ((xi[..., 1] - a2[j]) / (a2[j + 1] - a2[j]))[..., None]
        return ((1 - f) * (1 - g) * V[i, j] + f * (1 - g) * V[i + 1, j]
                + (1 - f) * g * V[i, j + 1] + f * g * V[i + 1, j + 1])

    def jacobian(self, xi, check=True):
        xi = np.asarray(xi, dtype=float)
        if check:
            self._check(xi)
        if self.layout == "line" and check:
            return self._dinterp(xi[..., 0])[..., None]
        h = 1e-6 * (1.0 + np.sqrt(np.sum(xi**2, axis=-1)))[..., None]
        cols = []
        for k in range(self.m):
            e = np.zeros(self.m)
            e[k] = 1.0
            hi = xi + h * e
            lo = xi - h * e
            # the stencil may straddle the border; use the continued interpolant
            fp, fm = self(hi, check=False), self(lo, check=False)
            cols.append((fp - fm) / (2 * h))
        return np.stack(cols, axis=-1)

    def as_operator(self, gauge=None) -> MonotoneOperator:
        """The table as a y-independent operator for the homogenized solve."""
        if gauge is None:
            from .nfunction import make_nfunction
            gauge = make_nfunction({"family": "power", "p": 2})

        def flux(y, xi):
            return self(xi, check=False)

        def jac(y, xi):
            return self.jacobian(xi, check=False)

        return MonotoneOperator(flux, jac, gauge, "monotone", name="homogenized table", odd=True)

    def save(self, path):
        cols = {f"xi{k + 1}": self.nodes[:, k] for k in range(self.m)}
        cols.update({f"A{k + 1}": self.hat_A[:, k] for k in range(self.m)})
        cols["energy"] = self.energy
        cols["residual"] = self.residual
        cols["iterations"] = self.iterations
        cols["converged"] = np.array([s != "failed" for s in self.status], dtype=float)
        meta = {"kind": "effective_operator", "layout": self.layout, **self.meta}
        if self.radii is not None:
            meta["radii"] = self.radii.tolist()
            meta["n_angles"] = self.n_angles
        return _io.write_table(path, cols, meta)


def effective_operator_table(op, xi_nodes, grid, config=None, N=1, workers=1):
    """Tabulate ``xi -> hat A(xi)``.

    Args:
        op: monotone operator.
        xi_nodes: 1D array (``m = 1``), ``{"radii": [...], "n_angles": k}`` for a
            polar table, or a pair of axes for a cartesian table (``m = 2``).
        grid: periodic cell grid.
        config: solver configuration.
        N: number of field components.
        workers: process pool size (operators built from a config record only).

    Per-node failures are recorded in ``status`` and do not abort the table.
    """
    radii = n_angles = axes = None
    if isinstance(xi_nodes, dict):
        layout = "polar"
        radii = np.asarray(xi_nodes["radii"], dtype=float)
        if radii[0] != 0:
            radii = np.concatenate([[0.0], radii])
        n_angles = int(xi_nodes["n_angles"])
        nodes = polar_nodes(radii, n_angles)
    elif isinstance(xi_nodes, tuple):
        layout = "cartesian"
        axes = tuple(np.asarray(a, dtype=float) for a in xi_nodes)
        X, Y = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
    else:
        layout = "line"
        nodes = np.asarray(xi_nodes, dtype=float).reshape(-1, 1)
    hat, energy, resid, iters, status = _solve_nodes(op, nodes, grid, config, N, workers)
    return EffectiveOperatorTable(layout, nodes, hat, resid, iters, status, energy,
                                  radii, n_angles, axes,
                                  meta={"d": grid.d, "K": grid.K, "N": N, "operator": op.name})


# ---------------------------------------------------------------------------
# effective potential and its conjugate


@dataclass
class EffectivePotential:
    """``f`` on the xi-grid, ``f*`` by two routes, and how each node value was obtained."""

    f: TabulatedConvexFunction
    fstar: TabulatedConvexFunction
    fstar_direct: np.ndarray
    eta: np.ndarray
    node_origin: list
    table: EffectiveOperatorTable
    flagged: list
    rel_gap: np.ndarray

    def save(self, path_f, path_fstar):
        self.f.save(path_f, "f")
        cols = {f"eta{k + 1}": self.eta[:, k] for k in range(self.eta.shape[1])}
        cols["fstar_legendre"] = self.fstar_values_at_eta()
        cols["fstar_direct"] = self.fstar_direct
        cols["rel_gap"] = self.rel_gap
        _io.write_table(path_fstar, cols, {"kind": "effective_conjugate",
                                           "flagged": self.flagged})

    def fstar_values_at_eta(self):
        if self.eta.shape[1] == 1:
            return self.fstar(self.eta[:, 0])
        return self.fstar(self.eta)


def _route_ii_1d(M, grid, eta):
    y = grid.element_points()
    w = grid.element_weights()
    out = np.empty(len(eta))
    for k, e in enumerate(eta):
        out[k] = float(np.dot(w, M.conj(y, np.full((len(w), 1), e))))
    return out


def _route_ii_kkt(M, grid, N, eta, tol=1e-10, max_iter=100):
    """Minimise ``sum_e w_e M*(y_e, W_e)`` over fields orthogonal to discrete
    gradients with prescribed mean ``eta`` (Newton on the KKT system)."""
    G = grid.gradient_matrix()
    if N > 1:
        G = sp.kron(G, sp.identity(N), format="csr")
    free = np.arange(N, grid.n_nodes * N)          # pin node 0
    Gf = G[:, free].tocsr()
    y = grid.element_points()
    w = grid.element_weights()
    nE, m = len(w), grid.d * N
    eta = np.asarray(eta, dtype=float)
    if not np.any(eta):
        return 0.0, True
    W = np.tile(eta, (nE, 1))
    lam = np.zeros(Gf.shape[1])
    mu = M.conj_gradient(y[:1], eta[None])[0]
    Wd = sp.diags(np.repeat(w, m))
    ones = sp.csr_matrix(np.tile(np.eye(m), (nE, 1)))  # (nE*m, m)
    C = sp.hstack([Wd @ Gf, Wd @ ones]).tocsr()         # constraint gradients

    def F(W, lam, mu):
        gW = M.conj_gradient(y, W).ravel()
        r1 = w.repeat(m) * (gW - Gf @ lam - np.tile(mu, nE))
        r2 = Gf.T @ (w.repeat(m) * W.ravel())
        r3 = (w[:, None] * W).sum(axis=0) - eta
        return r1, r2, r3

    ok = False
    for _ in range(max_iter):
        r1, r2, r3 = F(W, lam, mu)
        norm = max(np.max(np.abs(r1)), np.max(np.abs(r2)) if r2.size else 0, np.max(np.abs(r3)))
        if norm <= tol * grid.h ** grid.d:
            ok = True
            break
        H = M.conj_hessian(y, W)
        Hb = sp.bsr_matrix((w[:, None, None] * H, np.arange(nE), np.arange(nE + 1)),
                           shape=(nE * m, nE * m)) if m > 1 else sp.diags(w * H[:, 0, 0])
        K = sp.bmat([[Hb, -C], [-C.T, None]], format="csc")
        rhs = -np.concatenate([r1, -r2, -r3])
        step = spla.spsolve(K, rhs)
        if not np.all(np.isfinite(step)):
            break
        dW = step[: nE * m].reshape(nE, m)
        dl = step[nE * m: nE * m + len(lam)]
        dm = step[nE * m + len(lam):]
        alpha = 1.0
        n0 = np.sqrt(sum(float(np.dot(r, r)) for r in (r1, r2, r3)))
        for _ in range(40):
            t = F(W + alpha * dW, lam + alpha * dl, mu + alpha * dm)
            if np.sqrt(sum(float(np.dot(r, r)) for r in t)) < (1 - 1e-4 * alpha) * n0:
                break
            alpha /= 2
        W, lam, mu = W + alpha * dW, lam + alpha * dl, mu + alpha * dm
    return float(np.dot(w, M.conj(y, W))), ok


def effective_potential(M, xi_nodes, grid, config=None, eta=None, N=1, rtol=1e-4, workers=1):
    """Tabulate ``f`` by cell minimisation and ``f*`` by two independent routes.

    Route (i) is the discrete Legendre transform of the ``f`` table.  Route
    (ii) minimises the cell average of ``M*`` over fields orthogonal to all
    discrete periodic gradients with mean ``eta``; in 1D that set is the
    constant field ``eta`` and the minimum is explicit.

    Args:
        M: N-function (or a gradient operator, whose potential is used).
        xi_nodes: strictly increasing 1D array (``m = 1``) or a pair of axes
            of a cartesian grid (``m = 2``).
        grid: periodic cell grid.
        eta: dual sample points (rows); defaults to 11 points inside the
            range of tabulated slopes.
        rtol: relative tolerance of the cross-check between the routes.
    """
    op = M if isinstance(M, MonotoneOperator) else gradient_operator(M)
    if not op.is_gradient:
        raise ValueError("the effective potential needs a gradient operator")
    M = op.potential
    table = effective_operator_table(op, xi_nodes, grid, config, N, workers)
    if table.failures:
        raise ConvergenceError(f"cell solves failed at nodes {table.failures}")
    origin = ["minimization-converged" if s == "converged" else "reflected-by-symmetry"
              for s in table.status]
    if table.layout == "line":
        x = table.nodes[:, 0]
        order = np.argsort(x)
        f = TabulatedConvexFunction((x[order],), table.energy[order])
        slopes = np.diff(f.values) / np.diff(f.axes[0])
        if eta is None:
            lo, hi = slopes.min(), slopes.max()
            eta = np.linspace(0.8 * lo, 0.8 * hi, 11) if lo < 0 < hi else np.linspace(lo, hi, 11)
        eta = np.asarray(eta, dtype=float).reshape(-1, 1)
        dual = np.unique(np.concatenate([eta[:, 0], np.linspace(slopes.min(), slopes.max(),
                                                                len(x))]))
        fstar = conjugate(f, dual=dual, strict=True)
        direct = _route_ii_1d(M, grid, eta[:, 0]) if N == 1 and grid.d == 1 else np.array(
            [_route_ii_kkt(M, grid, N, e)[0] for e in eta])
        legendre = fstar(eta[:, 0])
    else:
        a1, a2 = table.axes
        f = TabulatedConvexFunction((a1, a2), table.energy.reshape(len(a1), len(a2)))
        fstar = conjugate(f, strict=False)
        if eta is None:
            d1, d2 = fstar.axes
            eta = np.array([[0.5 * d1[-1] * np.cos(t), 0.5 * d2[-1] * np.sin(t)]
                            for t in np.linspace(0, 2 * np.pi, 11)[:-1]] + [[0.0, 0.0]])
        eta = np.asarray(eta, dtype=float).reshape(-1, 2)
        direct = np.array([_route_ii_kkt(M, grid, N, e)[0] for e in eta])
        legendre = fstar(eta)
    scale = np.maximum(np.abs(direct), 1e-12)
    rel = np.abs(legendre - direct) / scale
    flagged = [int(i) for i in np.flatnonzero(rel > rtol)
               if not (abs(direct[i]) < 1e-12 and abs(legendre[i]) < 1e-10)]
    return EffectivePotential(f, fstar, direct, eta, origin, table, flagged, rel)


# ---------------------------------------------------------------------------
# properties of the homogenized operator


def _max_adjacent_jump(table):
    if table.layout == "line":
        x = table.nodes[:, 0]
        order = np.argsort(x)
        A = table.hat_A[order]
        return float(np.max(np.sqrt(np.sum(np.diff(A, axis=0) ** 2, axis=-1))))
    if table.layout == "cartesian":
        a1, a2 = table.axes
        V = table.hat_A.reshape(len(a1), len(a2), -1)
        j1 = np.sqrt(np.sum(np.diff(V, axis=0) ** 2, axis=-1)).max()
        j2 = np.sqrt(np.sum(np.diff(V, axis=1) ** 2, axis=-1)).max()
        return float(max(j1, j2))
    r, na = table.radii, table.n_angles
    V = np.concatenate([np.broadcast_to(table.hat_A[0], (1, na, 2)),
                        table.hat_A[1:].reshape(len(r) - 1, na, 2)])
    jr = np.sqrt(np.sum(np.diff(V, axis=0) ** 2, axis=-1)).max()
    ja = np.sqrt(np.sum((np.roll(V, -1, axis=1) - V) ** 2, axis=-1)).max()
    return float(max(jr, ja))


def refine_line_nodes(x):
    x = np.sort(np.asarray(x, dtype=float))
    return np.sort(np.concatenate([x, 0.5 * (x[1:] + x[:-1])]))


def verify_hatA_properties(op, table, potential, refined=None, grid=None, config=None,
                           jump_ratio=(1.7, 2.5)):
    """Coercivity, monotonicity and continuity checks for a tabulated ``hat A``.

    Args:
        op: the operator the table was computed from.
        table: :class:`EffectiveOperatorTable` (line or cartesian layout).
        potential: :class:`EffectivePotential` built on the same nodes.
        refined: table on a twice finer xi-grid; computed with ``grid`` and
            ``config`` when omitted.

    Returns:
        :class:`~mohom.conditions.Report` with ``coercivity_c``,
        ``monotonicity_min``, ``jump``, ``jump_refined``, ``jump_ratio`` and the
        finite-difference discrepancy between ``hat A`` and ``grad f``.
    """
    from .conditions import Report

    nodes = table.nodes
    A = table.hat_A
    norms = np.sqrt(np.sum(nodes**2, axis=-1))
    nz = norms > 0
    f = potential.f
    if table.layout == "line":
        fv = f(nodes[nz, 0])
        xs = f.axes[0]
        sl = np.diff(f.values) / np.diff(xs)
        # one-step extrapolation of the chord slopes brackets f' at the end nodes
        lo = sl[0] - (sl[1] - sl[0])
        hi = sl[-1] + (sl[-1] - sl[-2])
        s = A[nz, 0]
        if np.any(s < lo - 1e-9 * abs(lo)) or np.any(s > hi + 1e-9 * abs(hi)):
            raise RangeError("hat A values fall outside the dual range of the f table")
        dual = np.unique(s)
        fs_tab = conjugate(f, dual=dual if len(dual) > 1 else np.r_[dual, dual + 1], strict=False)
        fs = fs_tab(s)
        grad_f = np.gradient(f.values, xs, edge_order=2)
        fd_gap = float(np.max(np.abs(np.interp(nodes[:, 0], xs, grad_f) - A[:, 0])))
    else:
        fv = f(nodes[nz])
        fs_tab = conjugate(f, dual=tuple(
            np.linspace(A[:, k].min(), A[:, k].max(), len(ax)) for k, ax in enumerate(f.axes)),
            strict=False)
        fs = fs_tab(A[nz])
        g1, g2 = np.gradient(f.values, *f.axes, edge_order=2)
        fd_gap = float(np.max(np.abs(np.stack([g1.ravel(), g2.ravel()], -1) - A)))
    c = float(np.min(np.sum(A[nz] * nodes[nz], axis=-1) / (fv + fs)))
    i, j = np.triu_indices(len(nodes), k=1)
    dx = nodes[i] - nodes[j]
    n2 = np.sum(dx**2, axis=-1)
    keep = n2 > 0
    inner = np.sum((A[i] - A[j]) * dx, axis=-1)[keep]
    mono = float(np.min(inner / n2[keep]))
    mono_raw = float(np.min(inner))
    jump = _max_adjacent_jump(table)
    if refined is None:
        if grid is None:
            raise ValueError("pass either a refined table or the cell grid")
        if table.layout == "line":
            refined = effective_operator_table(op, refine_line_nodes(nodes[:, 0]), grid, config,
                                               table.meta.get("N", 1))
        else:
            refined = effective_operator_table(
                op, tuple(refine_line_nodes(a) for a in table.axes), grid, config,
                table.meta.get("N", 1))
    jump_ref = _max_adjacent_jump(refined)
    ratio = jump / jump_ref if jump_ref > 0 else np.inf
    passes = bool(c > 0 and mono > 0 and jump_ratio[0] <= ratio <= jump_ratio[1])
    return Report("hatA", passes,
                  {"coercivity_c": c, "monotonicity_min": mono, "monotonicity_min_raw": mono_raw,
                   "jump": jump, "jump_refined": jump_ref, "jump_ratio": ratio,
                   "grad_f_discrepancy": fd_gap,
                   "checks": {"coercivity": c > 0, "monotonicity": mono > 0,
                              "continuity": bool(jump_ratio[0] <= ratio <= jump_ratio[1])}})
