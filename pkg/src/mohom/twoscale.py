"""Two-scale composition ``S_eps(x, y) = eps * (floor(x / eps) + y)`` on aligned grids.

With ``q = n * eps / L`` grid intervals per period, a field on a
:class:`~mohom.pgrid.BoxGrid` is rearranged, without interpolation, into
``(cell index, local point)`` samples:

* element fields: local points are the element centroids of a periodic
  ``q``-grid, in the same order as :meth:`PeriodicGrid.element_points`;
* nodal fields: local points are the ``q + 1`` nodes of ``[0, 1]`` per axis,
  endpoints included, with trapezoid weights.  Nodes on cell interfaces are
  shared by neighbouring cells with half weight each, so integrals are
  preserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pgrid import BoxGrid, PeriodicGrid


class AlignmentError(ValueError):
    """The period does not match the grid."""


def cells_and_q(grid: BoxGrid, eps: float):
    """Number of cells per axis and grid intervals per cell, validating alignment."""
    cells = grid.L / eps
    q = grid.n * eps / grid.L
    if (abs(cells - round(cells)) > 1e-9 * max(1.0, cells)
            or abs(q * round(cells) - grid.n) > 1e-9 or abs(q - round(q)) > 1e-9):
        raise AlignmentError(
            f"eps = {eps:g} is not aligned with a box of length {grid.L:g} and n = {grid.n} "
            "intervals (need L/eps and n*eps/L integer)")
    return int(round(cells)), int(round(q))


@dataclass
class UnfoldedField:
    """Samples ``v(S_eps(x, y))`` indexed by ``(cell..., local...)``.

    Attributes:
        values: array ``cells_shape + local_shape + comps``.
        weights: local quadrature weights on ``Y`` (sum 1), ``local_shape``.
        y: local points, ``local_shape + (d,)``.
        eps: the period.
        d: dimension.
        at: ``"elements"`` or ``"nodes"``.
    """

    values: np.ndarray
    weights: np.ndarray
    y: np.ndarray
    eps: float
    d: int
    at: str

    @property
    def cells_shape(self):
        return self.values.shape[: self.d]

    @property
    def local_shape(self):
        return self.weights.shape

    @property
    def comps_shape(self):
        return self.values.shape[self.d + self.weights.ndim:]

    def cell_origins(self):
        """Lower corners ``eps * N(x / eps)`` of the cells, ``cells_shape + (d,)``."""
        idx = np.meshgrid(*[np.arange(c) for c in self.cells_shape], indexing="ij")
        return self.eps * np.stack(idx, axis=-1).astype(float)

    def points(self):
        """Physical points ``S_eps(x, y)`` for every sample, ``cells + local + (d,)``."""
        org = self.cell_origins()
        nl = self.weights.ndim
        o = org.reshape(org.shape[:-1] + (1,) * nl + (self.d,))
        return o + self.eps * self.y.reshape((1,) * self.d + self.y.shape)

    def integrate(self):
        """``integral over Omega x Y`` with the shared quadrature."""
        nl = self.weights.ndim
        axes_local = tuple(range(self.d, self.d + nl))
        w = self.weights.reshape((1,) * self.d + self.weights.shape
                                 + (1,) * len(self.comps_shape))
        per_cell = np.sum(self.values * w, axis=axes_local)
        out = self.eps**self.d * np.sum(per_cell, axis=tuple(range(self.d)))
        return float(out) if np.ndim(out) == 0 else out

    def save(self, path):
        from . import io as _io
        nc = int(np.prod(self.cells_shape))
        nl = int(np.prod(self.local_shape))
        vals = self.values.reshape(nc, nl, -1)
        cell = np.repeat(np.arange(nc), nl)
        ynode = np.tile(np.arange(nl), nc)
        cols = {"cell": cell, "y_index": ynode}
        yy = np.tile(self.y.reshape(nl, self.d), (nc, 1))
        for k in range(self.d):
            cols[f"y{k + 1}"] = yy[:, k]
        for k in range(vals.shape[2]):
            cols[f"v{k + 1}"] = vals[:, :, k].ravel()
        return _io.write_table(path, cols, {"kind": "unfolded", "eps": self.eps, "at": self.at,
                                            "cells_shape": list(self.cells_shape),
                                            "local_shape": list(self.local_shape)})


def _local_node_weights(q, d):
    w1 = np.full(q + 1, 1.0 / q)
    w1[[0, -1]] = 0.5 / q
    w = w1
    for _ in range(d - 1):
        w = np.multiply.outer(w, w1)
    return w


def unfold(values, eps, grid: BoxGrid, at="elements") -> UnfoldedField:
    """Unfold a nodal or element field on an aligned box grid."""
    C, q = cells_and_q(grid, eps)
    v = grid.check_field(np.asarray(values, dtype=float), at)
    d = grid.d
    if at == "elements":
        comps = v.shape[len(grid.element_shape):]
        if d == 1:
            out = v.reshape((C, q) + comps)
        else:
            out = v.reshape((C, q, C, q, 2) + comps)
            out = np.moveaxis(out, 2, 1)
        cell = PeriodicGrid(d, q)
        weights = cell.element_weights().reshape(cell.element_shape)
        y = cell.element_points().reshape(cell.element_shape + (d,))
        return UnfoldedField(out, weights, y, eps, d, "elements")
    if at != "nodes":
        raise ValueError(f"unknown location {at!r}")
    comps = v.shape[d:]
    if d == 1:
        idx = (np.arange(C)[:, None] * q + np.arange(q + 1)[None, :])
        out = v[idx]
        yl = (np.arange(q + 1) / q)[:, None]
    else:
        i = np.arange(C)[:, None] * q + np.arange(q + 1)[None, :]      # (C, q+1)
        out = v[i[:, None, :, None], i[None, :, None, :]]               # (C, C, q+1, q+1)
        ax = np.arange(q + 1) / q
        Y1, Y2 = np.meshgrid(ax, ax, indexing="ij")
        yl = np.stack([Y1, Y2], axis=-1)
    del comps
    return UnfoldedField(out, _local_node_weights(q, d), yl, eps, d, "nodes")


def two_scale_average(unfolded: UnfoldedField) -> np.ndarray:
    """Per-cell ``Y``-average, shape ``cells_shape + comps``."""
    nl = unfolded.weights.ndim
    axes_local = tuple(range(unfolded.d, unfolded.d + nl))
    w = unfolded.weights.reshape((1,) * unfolded.d + unfolded.weights.shape
                                 + (1,) * len(unfolded.comps_shape))
    return np.sum(unfolded.values * w, axis=axes_local) / np.sum(unfolded.weights)


def decomposition_identity_check(g, eps, grid: BoxGrid, fields=(), at="elements"):
    """``|int g(x, x/eps) dx - int int g(S_eps(x, y), y) dy dx|``.

    Args:
        g: callable ``g(x, y, *field_values)`` with ``x, y`` of shape ``(..., d)``
            returning values of shape ``(...)``; must be 1-periodic in ``y``.
        eps: aligned period.
        grid: box grid.
        fields: fields on the grid (same location ``at``) whose samples are
            passed to ``g`` after ``x`` and ``y`` (solver output integrands).
        at: ``"elements"`` or ``"nodes"``.

    Returns:
        The absolute gap between the two quadratures.
    """
    cells_and_q(grid, eps)
    if at == "elements":
        x = grid.element_points()
        w = grid.element_weights()
        shape = grid.element_shape
    else:
        x = grid.node_points()
        w = grid.node_weights()
        shape = grid.shape
    fv = [grid.check_field(np.asarray(f, dtype=float), at) for f in fields]
    flat = [f.reshape((x.shape[0],) + f.shape[len(shape):]) for f in fv]
    lhs = float(np.dot(w, np.asarray(g(x, x / eps, *flat), dtype=float).reshape(len(w))))
    ones = unfold(np.zeros(shape), eps, grid, at)
    pts = ones.points()
    yl = np.broadcast_to(ones.y.reshape((1,) * grid.d + ones.y.shape), pts.shape)
    unf = [unfold(f, eps, grid, at).values for f in fv]
    vals = np.asarray(g(pts, yl, *unf), dtype=float)
    wl = ones.weights.reshape((1,) * grid.d + ones.weights.shape)
    rhs = float(eps**grid.d * np.sum(vals * wl))
    return abs(lhs - rhs)


def divergence_free_basis(d, y, n_modes=1):
    """Unit-norm periodic divergence-free fields sampled at ``y`` (``(..., d)``).

    1D: the constant field.  2D: the constants ``e1, e2`` and rotated gradients
    ``R grad phi`` of ``phi = cos/sin(2 pi k.y)`` for ``k`` in ``{(1,0), (0,1),
    (1,1), (1,-1)}`` (times ``1..n_modes``).
    """
    y = np.asarray(y, dtype=float)
    out = []
    if d == 1:
        return [np.ones(y.shape[:-1] + (1,))]
    out.append(np.broadcast_to([1.0, 0.0], y.shape[:-1] + (2,)).copy())
    out.append(np.broadcast_to([0.0, 1.0], y.shape[:-1] + (2,)).copy())
    for s in range(1, n_modes + 1):
        for k in ([1, 0], [0, 1], [1, 1], [1, -1]):
            k = s * np.asarray(k, dtype=float)
            ph = 2 * np.pi * (y @ k)
            for gfac in (-np.sin(ph), np.cos(ph)):        # d/dy of cos, sin
                grad = (2 * np.pi * gfac)[..., None] * k
                rot = np.stack([-grad[..., 1], grad[..., 0]], axis=-1)
                norm = 2 * np.pi * np.linalg.norm(k) / np.sqrt(2)
                out.append(rot / norm)
    return out


def corrector_diagnostic(grad_eps, grad_hom, eps, grid: BoxGrid, corrector=None, op=None,
                         N=1, cell_config=None, potential=None, n_modes=1):
    """Compare the unfolded oscillation of ``grad u_eps`` with cell correctors.

    Args:
        grad_eps: element gradients of the oscillatory solution, ``(n_el, m)``.
        grad_hom: element gradients of the homogenized solution, ``(n_el, m)``.
        eps: aligned period.
        grid: box grid.
        corrector: optional closed form ``(xi, y) -> grad_y w_xi(y)``, with
            ``xi`` of shape ``(..., m)`` and ``y`` of shape ``(..., d)``.
        op: operator used to compute correctors by cell solves when
            ``corrector`` is omitted.
        potential: energy density ``M(y, xi)`` for the lower-semicontinuity
            spot check (defaults to the potential of ``op`` when available).

    Returns:
        dict with ``corrector_l1_max`` and ``corrector_l1_mean`` (per-cell
        ``Y``-integrals of ``|U_est - grad_y w|``), ``orthogonality_gap``,
        ``cell_average_deviation`` and, when a potential is available,
        ``lsc_lhs``, ``lsc_rhs``, ``lsc_gap``.
    """
    d = grid.d
    m = d * N
    ge = np.asarray(grad_eps, dtype=float).reshape(grid.element_shape + (m,))
    gh = np.asarray(grad_hom, dtype=float).reshape(grid.element_shape + (m,))
    Ue = unfold(ge, eps, grid, "elements")
    Uh = unfold(gh, eps, grid, "elements")
    xi_cell = two_scale_average(Uh)                            # cells + (m,)
    avg_eps = two_scale_average(Ue)
    nl = Ue.weights.ndim
    lead = (slice(None),) * d + (None,) * nl
    U_est = Ue.values - xi_cell[lead]
    cells = Ue.cells_shape
    ncell = int(np.prod(cells))
    xi_flat = xi_cell.reshape(ncell, m)
    yl = Ue.y.reshape(-1, d)
    nloc = yl.shape[0]
    if corrector is not None:
        ref = np.asarray(corrector(xi_flat[:, None, :], yl[None, :, :]), dtype=float)
        ref = np.broadcast_to(ref, (ncell, nloc, m))
    else:
        if op is None:
            raise ValueError("pass a closed-form corrector or an operator")
        from .cell import solve_cell
        _, q = cells_and_q(grid, eps)
        cg = PeriodicGrid(d, q)
        ref = np.empty((ncell, nloc, m))
        cache = {}
        for c in range(ncell):
            key = tuple(np.round(xi_flat[c], 13))
            if key not in cache:
                cache[key] = solve_cell(op, xi_flat[c], cg, cell_config, N).corrector_gradient
            ref[c] = cache[key].reshape(nloc, m)
    U = U_est.reshape(ncell, nloc, m)
    w = Ue.weights.reshape(nloc)
    dist = np.sum(w[None, :] * np.sqrt(np.sum((U - ref) ** 2, axis=-1)), axis=1)
    basis = divergence_free_basis(d, yl, n_modes)
    gap = 0.0
    for psi in basis:
        psi = psi.reshape(nloc, d)
        if N > 1:
            for k in range(N):
                comp = U.reshape(ncell, nloc, d, N)[..., k]
                gap = max(gap, float(np.max(np.abs(np.einsum("l,cld,ld->c", w, comp, psi)))))
        else:
            gap = max(gap, float(np.max(np.abs(np.einsum("l,cld,ld->c", w, U, psi)))))
    out = {
        "corrector_l1_max": float(dist.max()),
        "corrector_l1_mean": float(dist.mean()),
        "orthogonality_gap": gap,
        "cell_average_deviation": float(np.max(np.abs(avg_eps - xi_cell))),
    }
    if potential is None and op is not None and op.is_gradient:
        potential = op.potential
    if potential is not None:
        ycell = np.broadcast_to(yl[None], (ncell, nloc, d))
        lhs = float(eps**d * np.sum(w[None, :] * potential(ycell, Ue.values.reshape(ncell, nloc, m))))
        lim = xi_flat[:, None, :] + ref
        rhs = float(eps**d * np.sum(w[None, :] * potential(ycell, lim)))
        out.update({"lsc_lhs": lhs, "lsc_rhs": rhs, "lsc_gap": lhs - rhs})
    return out
