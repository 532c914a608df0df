"""Oscillatory and homogenized Dirichlet problems on boxes and the eps -> 0 study.

Both problems are posed in weak form on a :class:`~mohom.pgrid.BoxGrid`:
find ``u`` vanishing on the boundary with

    integral (A(x/eps, grad u) - F) . grad phi = 0   for every test ``phi``,

where for the homogenized problem ``A(x/eps, .)`` is replaced by a
y-independent operator (usually an :class:`~mohom.cell.EffectiveOperatorTable`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import io as _io
from .cell import EffectiveOperatorTable, effective_operator_table
from .nfunction import RangeError
from .operator import MonotoneOperator
from .pgrid import BoxGrid, PeriodicGrid
from .solver import ConvergenceError, FluxSystem, SolverConfig, solve
from .twoscale import AlignmentError, cells_and_q, corrector_diagnostic

MIN_NODES_PER_CELL = 16


@dataclass
class DirichletSolution:
    """Solution of a Dirichlet problem on a box grid.

    Attributes:
        u: nodal values, ``grid.shape + (N,)``.
        grad: element gradients, ``(n_elements, m)``.
        flux: element fluxes ``A(x/eps, grad u)``, ``(n_elements, m)``.
        energy: ``integral A . grad u``.
        load_energy: ``integral F . grad u``; equal to ``energy`` at a solution.
        residual: scaled sup-norm of the weak-form residual on free nodes.
        iterations: solver iterations.
        strategy: globalisation stage that converged.
        eps: period (``None`` for the homogenized problem).
    """

    u: np.ndarray
    grad: np.ndarray
    flux: np.ndarray
    energy: float
    load_energy: float
    residual: float
    iterations: int
    strategy: str
    eps: float | None
    N: int = 1
    delta_floor_bound: bool = False

    @property
    def energy_identity_gap(self):
        return abs(self.energy - self.load_energy)

    def summary(self):
        return {"eps": self.eps, "energy": self.energy, "load_energy": self.load_energy,
                "energy_identity_gap": self.energy_identity_gap, "residual": self.residual,
                "iterations": self.iterations, "strategy": self.strategy,
                "delta_floor_bound": self.delta_floor_bound,
                "max_abs_u": float(np.max(np.abs(self.u)))}

    def save(self, path, grid):
        pts = grid.node_points()
        cols = {f"x{k + 1}": pts[:, k] for k in range(grid.d)}
        u = self.u.reshape(grid.n_nodes, -1)
        for k in range(u.shape[1]):
            cols[f"u{k + 1}"] = u[:, k]
        return _io.write_table(path, cols, {"kind": "dirichlet_solution", **self.summary()})


def check_alignment(grid: BoxGrid, eps, min_nodes_per_cell=MIN_NODES_PER_CELL):
    """Validate that the period fits the grid and return intervals per cell."""
    _, q = cells_and_q(grid, eps)
    if q < min_nodes_per_cell:
        raise AlignmentError(f"eps = {eps:g} resolves only {q} grid intervals per period "
                             f"(need at least {min_nodes_per_cell})")
    return q


def _load_on_elements(F, grid, m):
    """Evaluate a load given as a constant, a callable of ``x`` or an element array."""
    if callable(F):
        val = np.asarray(F(grid.element_points()), dtype=float)
    else:
        val = np.asarray(F, dtype=float)
    if val.ndim == 0 or val.size == m:
        return np.broadcast_to(val.reshape(-1), (grid.n_elements, m)).copy()
    return val.reshape(grid.n_elements, m)


def _solve_box(op, grid, y, F, N, config, eps, x0=None):
    if grid.periodic:
        raise ValueError("Dirichlet problems live on a box grid")
    m = grid.d * N
    load = _load_on_elements(F, grid, m)
    system = FluxSystem(op, grid.gradient_matrix(), grid.element_weights(), y, N,
                        grid.interior_index(), load=load,
                        residual_scale=grid.h ** (grid.d - 1))
    res = solve(system, x0, config or SolverConfig(tol=1e-10 if grid.d == 1 else 1e-8))
    grads = system.gradients(res.x)
    flux = op(system.y, grads)
    w = system.w
    energy = float(np.sum(w[:, None] * flux * grads))
    load_energy = float(np.sum(w[:, None] * load * grads))
    u = system.expand(res.x).reshape(grid.shape + (N,))
    return DirichletSolution(u, grads, flux, energy, load_energy, res.residual, res.iterations,
                             res.strategy, eps, N, res.delta_floor_bound)


def solve_eps_problem(op: MonotoneOperator, eps, F, grid: BoxGrid, config=None, N=1,
                      min_nodes_per_cell=MIN_NODES_PER_CELL, x0=None) -> DirichletSolution:
    """Solve ``-div A(x/eps, grad u) = -div F`` with ``u = 0`` on the boundary.

    Args:
        op: periodic monotone operator.
        eps: period; ``L/eps`` and ``n*eps/L`` must be integers.
        F: load, a constant, a callable of ``x`` (``(n, d) -> (n, m)``) or an
            element array.
        grid: box grid.
        config: solver configuration.
        N: number of field components.
        min_nodes_per_cell: resolution floor per period.

    Raises:
        AlignmentError: for periods that do not fit the grid.
        ConvergenceError: when the solver fails.
    """
    check_alignment(grid, eps, min_nodes_per_cell)
    return _solve_box(op, grid, grid.element_points() / eps, F, N, config, eps, x0)


def solve_homogenized(source, F, grid: BoxGrid, config=None, N=1, gauge=None,
                      extend=None, max_extensions=4) -> DirichletSolution:
    """Solve ``-div hat A(grad u) = -div F`` with ``u = 0`` on the boundary.

    Args:
        source: :class:`EffectiveOperatorTable` or a y-independent
            :class:`MonotoneOperator`.
        F: load (see :func:`solve_eps_problem`).
        grid: box grid.
        config: solver configuration.
        N: number of field components.
        gauge: N-function attached to a table-backed operator.
        extend: optional ``(op, cell_grid, cell_config)``; when the solution
            leaves the table, the table is enlarged by cell solves and the
            solve is repeated.
        max_extensions: cap on table enlargements.

    Raises:
        RangeError: when the solution leaves the table and ``extend`` is not given.
    """
    table = source if isinstance(source, EffectiveOperatorTable) else None
    for _ in range(max_extensions + 1):
        op = table.as_operator(gauge) if table is not None else source
        try:
            sol = _solve_box(op, grid, grid.element_points(), F, N, config, None)
            if table is not None:
                table(sol.grad)       # the final gradients must lie in the table
            return sol
        except RangeError:
            if table is None or extend is None:
                raise
            table = extend_table(table, *extend)
    raise RangeError(f"solution still leaves the table after {max_extensions} extensions")


def extend_table(table: EffectiveOperatorTable, op, cell_grid: PeriodicGrid, config=None,
                 factor=2.0) -> EffectiveOperatorTable:
    """Enlarge a line or polar table by ``factor`` with extra cell solves."""
    N = int(table.meta.get("N", 1))
    if table.layout == "line":
        x = np.sort(table.nodes[:, 0])
        lo, hi = x[0], x[-1]
        step = np.max(np.diff(x))
        new = np.concatenate([np.arange(lo - step, factor * lo - step / 2, -step)[::-1],
                              x, np.arange(hi + step, factor * hi + step / 2, step)])
        return effective_operator_table(op, new, cell_grid, config, N)
    if table.layout == "polar":
        r = table.radii
        step = float(np.max(np.diff(r)))
        extra = np.arange(r[-1] + step, factor * r[-1] + step / 2, step)
        radii = np.concatenate([r, extra])
        return effective_operator_table(op, {"radii": radii, "n_angles": table.n_angles},
                                        cell_grid, config, N)
    raise RangeError("cartesian tables cannot be extended automatically")


def truncate(v, k, vector=False):
    """Truncation ``T_k``: clip scalars to ``[-k, k]``, or vectors to the ball of radius ``k``.

    Args:
        v: array of values.
        k: truncation level (positive).
        vector: treat the last axis as vector components.
    """
    v = np.asarray(v, dtype=float)
    if k <= 0:
        raise ValueError("truncation level must be positive")
    if not vector:
        return np.clip(v, -k, k)
    n = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    # a rescaled vector may have norm k up to rounding; leave it alone so T_k is idempotent
    inside = n <= k * (1 + 4 * np.finfo(float).eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(inside, 1.0, k / n)
    return v * s


def truncation_modulars(M, sol: DirichletSolution, grid: BoxGrid, levels=None):
    """``integral M(x/eps, grad(T_k u - u))`` for each level ``k``.

    Levels default to ``max|u| / 4``, ``max|u| / 2`` and ``max|u|``.
    """
    u = sol.u.reshape(grid.n_nodes, -1)
    umax = float(np.max(np.sqrt(np.sum(u * u, axis=-1))))
    levels = levels or [umax / 4, umax / 2, umax]
    G = grid.gradient_matrix()
    y = grid.element_points() / (sol.eps or 1.0)
    out = []
    for k in levels:
        if k <= 0:
            out.append(0.0)
            continue
        diff = truncate(u, k, vector=u.shape[1] > 1) - u
        g = (G @ diff).reshape(grid.n_elements, grid.d, -1)
        g = g.reshape(grid.n_elements, -1)
        with np.errstate(over="ignore"):
            out.append(float(np.dot(grid.element_weights(), M(y, g))))
    return list(levels), out


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceReport:
    """Per-eps rows of errors, energies, uniform bounds and two-scale diagnostics."""

    rows: list
    homogenized: dict
    grid: dict
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def converged_rows(self):
        return [r for r in self.rows if r["status"] == "converged"]

    @property
    def uniform_bound_variation(self):
        """Relative spread of the uniform-bound sum over the smaller half of the eps list."""
        rows = sorted(self.converged_rows, key=lambda r: r["eps"])
        half = rows[: max(2, (len(rows) + 1) // 2)]
        s = np.array([r["uniform_bound"] for r in half])
        return float(s.max() / s.min() - 1.0) if s.min() > 0 else float("inf")

    def l1_errors_decrease(self):
        rows = sorted(self.rows, key=lambda r: -r["eps"])
        e = [r["l1_error"] for r in rows]
        return all(b < a for a, b in zip(e, e[1:]))

    def to_dict(self):
        out = {"rows": self.rows, "homogenized": self.homogenized, "grid": self.grid,
               "meta": self.meta}
        if len(self.rows) > 1:
            out["uniform_bound_variation"] = self.uniform_bound_variation
            out["l1_errors_decrease"] = self.l1_errors_decrease()
        return out

    def save(self, path):
        first = self.converged_rows[0] if self.converged_rows else self.rows[0]
        keys = [k for k in first if np.isscalar(first[k]) and not isinstance(first[k], str)]
        cols = {k: np.array([r.get(k, np.nan) for r in self.rows], dtype=float) for k in keys}
        return _io.write_table(path, cols, {"kind": "convergence", "grid": self.grid,
                                            "homogenized": self.homogenized})


def convergence_study(op: MonotoneOperator, source, F, eps_list, grid: BoxGrid, config=None,
                      N=1, corrector=None, cell_config=None, gauge=None,
                      diagnostics=True) -> ConvergenceReport:
    """Solve the oscillatory problems for every eps and compare with the homogenized one.

    All problems share ``grid``, so errors are nodewise without interpolation.

    Args:
        op: periodic operator.
        source: homogenized operator (table or y-independent operator).
        F: load.
        eps_list: periods, each aligned with ``grid``.
        grid: common box grid.
        config: solver configuration.
        N: number of components.
        corrector: optional closed-form corrector gradient for the two-scale
            diagnostics (otherwise cell solves on the per-period subgrid).
        cell_config: solver configuration for those cell solves.
        gauge: N-function for the uniform bounds (defaults to ``op.gauge``).
        diagnostics: compute the two-scale diagnostics.
    """
    gauge = gauge or op.gauge
    for eps in eps_list:
        check_alignment(grid, eps)
    hom = solve_homogenized(source, F, grid, config, N, gauge=gauge)
    m1 = gauge.m1
    m2s = gauge.m2.conj
    w_el = grid.element_weights()
    node_w = grid.node_weights()
    hom_energy = hom.energy
    rows = []
    for eps in sorted(eps_list, reverse=True):
        try:
            sol = solve_eps_problem(op, eps, F, grid, config, N)
        except ConvergenceError as exc:
            rows.append({"eps": float(eps), "status": "failed", "residual": exc.best_residual,
                         "l1_error": float("nan")})
            continue
        du = (sol.u - hom.u).reshape(grid.n_nodes, -1)
        l1 = float(np.dot(node_w, np.sqrt(np.sum(du * du, axis=-1))))
        dg = sol.grad - hom.grad
        gl1 = float(np.dot(w_el, np.sqrt(np.sum(dg * dg, axis=-1))))
        with np.errstate(over="ignore"):
            mod1 = float(np.dot(w_el, m1(np.sqrt(np.sum(sol.grad**2, axis=-1)))))
            mod2 = float(np.dot(w_el, m2s(np.sqrt(np.sum(sol.flux**2, axis=-1)))))
        row = {"eps": float(eps), "l1_error": l1, "grad_l1_distance": gl1,
               "energy": sol.energy, "homogenized_energy": hom_energy,
               "energy_gap": abs(sol.energy - hom_energy),
               "energy_identity_gap": sol.energy_identity_gap,
               "m1_modular_grad": mod1, "m2star_modular_flux": mod2,
               "uniform_bound": mod1 + mod2, "residual": sol.residual,
               "iterations": sol.iterations, "strategy": sol.strategy, "status": "converged"}
        if diagnostics:
            diag = corrector_diagnostic(sol.grad, hom.grad, eps, grid, corrector=corrector,
                                        op=op, N=N, cell_config=cell_config)
            row.update(diag)
        rows.append(row)
    return ConvergenceReport(rows, hom.summary(),
                             {"d": grid.d, "n": grid.n, "L": grid.L},
                             meta={"operator": op.name, "N": N})
