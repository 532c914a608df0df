"""Uniform periodic cells and Dirichlet boxes in one or two dimensions.

Nodal fields are numpy arrays whose leading axes are ``grid.shape`` and whose
trailing axes (if any) hold the field components.  Gradient fields carry one
extra axis of length ``d`` placed *before* the component axes, so a gradient
of an ``R^N`` valued field has trailing shape ``(d, N)``.

Besides the centred-difference operators used for field algebra, each grid
exposes a staggered first-order element structure (intervals in 1D, two
triangles per square in 2D).  The solvers work on that structure: nodal
unknowns, element-wise constant gradients, element quadrature weights.
Summation by parts is then exact, which is what keeps the weak-form residual,
the energy identity and the unfolding identities free of consistency errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GridMismatchError(ValueError):
    """A field does not live on the grid it is combined with."""


def _check_d(d):
    if d not in (1, 2):
        raise ValueError(f"only d = 1 or d = 2 is supported, got d = {d}")


def _element_gradient_matrix(n_cells, d, node_index):
    """Sparse map from nodal values to element gradients.

    Args:
        n_cells: number of elementary squares (intervals) per axis.
        d: dimension.
        node_index: callable ``(i, j) -> flat node id`` (or ``i -> id`` in 1D)
            acting on integer arrays; it encodes wrap-around or box layout.

    Returns:
        CSR matrix of shape ``(n_elements * d, n_nodes)`` with rows ordered
        element-major, direction-minor, and the element centroids in units of
        the spacing.
    """
    if d == 1:
        i = np.arange(n_cells)
        a, b = node_index(i), node_index(i + 1)
        rows = np.concatenate([i, i])
        cols = np.concatenate([a, b])
        vals = np.concatenate([-np.ones(n_cells), np.ones(n_cells)])
        cent = (i + 0.5)[:, None]
        return rows, cols, vals, cent
    ii, jj = np.meshgrid(np.arange(n_cells), np.arange(n_cells), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    sq = ii * n_cells + jj
    n00 = node_index(ii, jj)
    n10 = node_index(ii + 1, jj)
    n01 = node_index(ii, jj + 1)
    n11 = node_index(ii + 1, jj + 1)
    e_lo, e_up = 2 * sq, 2 * sq + 1
    one = np.ones(sq.size)
    rows = np.concatenate([
        2 * e_lo, 2 * e_lo, 2 * e_lo + 1, 2 * e_lo + 1,
        2 * e_up, 2 * e_up, 2 * e_up + 1, 2 * e_up + 1,
    ])
    cols = np.concatenate([n00, n10, n00, n01, n01, n11, n10, n11])
    vals = np.concatenate([-one, one, -one, one, -one, one, -one, one])
    cent = np.empty((2 * sq.size, 2))
    cent[e_lo] = np.column_stack([ii + 1.0 / 3.0, jj + 1.0 / 3.0])
    cent[e_up] = np.column_stack([ii + 2.0 / 3.0, jj + 2.0 / 3.0])
    return rows, cols, vals, cent


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the unit cell ``Y = [0, 1)^d`` with periodic wrap.

    Args:
        d: dimension (1 or 2).
        K: nodes per axis; ``h = 1/K``.
    """

    d: int
    K: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_d(self.d)
        if int(self.K) != self.K or self.K < 4:
            raise ValueError(f"K must be an integer >= 4, got {self.K}")

    periodic = True

    @property
    def h(self) -> float:
        return 1.0 / self.K

    @property
    def shape(self) -> tuple:
        return (self.K,) * self.d

    @property
    def n_nodes(self) -> int:
        return self.K**self.d

    @property
    def measure(self) -> float:
        return 1.0

    @property
    def element_shape(self) -> tuple:
        return (self.K,) if self.d == 1 else (self.K, self.K, 2)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.element_shape))

    def node_points(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, d)`` in C order."""
        ax = np.arange(self.K) * self.h
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_weights(self) -> np.ndarray:
        return np.full(self.n_nodes, self.h**self.d)

    def element_points(self) -> np.ndarray:
        self._build_elements()
        return self._cache["centroids"]

    def element_weights(self) -> np.ndarray:
        w = self.h**self.d / (1 if self.d == 1 else 2)
        return np.full(self.n_elements, w)

    def gradient_matrix(self) -> sp.csr_matrix:
        """Element gradient operator, shape ``(n_elements * d, n_nodes)``."""
        self._build_elements()
        return self._cache["G"]

    def _build_elements(self):
        if "G" in self._cache:
            return
        K = self.K
        if self.d == 1:
            idx = lambda i: np.mod(i, K)  # noqa: E731
        else:
            idx = lambda i, j: np.mod(i, K) * K + np.mod(j, K)  # noqa: E731
        rows, cols, vals, cent = _element_gradient_matrix(K, self.d, idx)
        G = sp.csr_matrix((vals / self.h, (rows, cols)),
                          shape=(self.n_elements * self.d, self.n_nodes))
        self._cache["G"] = G
        self._cache["centroids"] = cent * self.h

    def check_field(self, values, at="nodes"):
        shape = self.shape if at == "nodes" else self.element_shape
        values = np.asarray(values)
        if values.shape[: len(shape)] != shape:
            raise GridMismatchError(
                f"field of shape {values.shape} does not live on {at} of grid {shape}")
        return values


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grid on ``[0, L]^d`` including the boundary nodes.

    Args:
        d: dimension (1 or 2).
        n: number of intervals per axis (``n + 1`` nodes per axis).
        L: edge length of the box.
    """

    d: int
    n: int
    L: float = 1.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_d(self.d)
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    periodic = False

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n + 1,) * self.d

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** self.d

    @property
    def measure(self) -> float:
        return self.L**self.d

    @property
    def element_shape(self) -> tuple:
        return (self.n,) if self.d == 1 else (self.n, self.n, 2)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.element_shape))

    def node_points(self) -> np.ndarray:
        ax = np.arange(self.n + 1) * self.h
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_weights(self) -> np.ndarray:
        w1 = np.full(self.n + 1, self.h)
        w1[[0, -1]] = self.h / 2
        w = w1
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, w1)
        return w.ravel()

    def boundary_mask(self) -> np.ndarray:
        """Boolean nodal array, True on the boundary of the box."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            sl = [slice(None)] * self.d
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask().ravel())

    def element_points(self) -> np.ndarray:
        self._build_elements()
        return self._cache["centroids"]

    def element_weights(self) -> np.ndarray:
        w = self.h**self.d / (1 if self.d == 1 else 2)
        return np.full(self.n_elements, w)

    def gradient_matrix(self) -> sp.csr_matrix:
        self._build_elements()
        return self._cache["G"]

    def _build_elements(self):
        if "G" in self._cache:
            return
        m = self.n + 1
        if self.d == 1:
            idx = lambda i: i  # noqa: E731
        else:
            idx = lambda i, j: i * m + j  # noqa: E731
        rows, cols, vals, cent = _element_gradient_matrix(self.n, self.d, idx)
        G = sp.csr_matrix((vals / self.h, (rows, cols)),
                          shape=(self.n_elements * self.d, self.n_nodes))
        self._cache["G"] = G
        self._cache["centroids"] = cent * self.h

    def check_field(self, values, at="nodes"):
        shape = self.shape if at == "nodes" else self.element_shape
        values = np.asarray(values)
        if values.shape[: len(shape)] != shape:
            raise GridMismatchError(
                f"field of shape {values.shape} does not live on {at} of grid {shape}")
        return values


def gradient(values, grid) -> np.ndarray:
    """Centred-difference nodal gradient.

    Periodic grids wrap around; box grids use one-sided first-order
    differences on the boundary.

    Args:
        values: nodal field with shape ``grid.shape + comps``.
        grid: a :class:`PeriodicGrid` or :class:`BoxGrid`.

    Returns:
        Array of shape ``grid.shape + (d,) + comps``.
    """
    v = grid.check_field(np.asarray(values, dtype=float))
    h = grid.h
    parts = []
    for ax in range(grid.d):
        if grid.periodic:
            parts.append((np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2 * h))
        else:
            parts.append(np.gradient(v, h, axis=ax, edge_order=1))
    return np.stack(parts, axis=grid.d)


def divergence(values, grid) -> np.ndarray:
    """Centred-difference divergence of a field of shape ``grid.shape + (d,) + comps``."""
    v = grid.check_field(np.asarray(values, dtype=float))
    if v.ndim <= grid.d or v.shape[grid.d] != grid.d:
        raise GridMismatchError("divergence expects a gradient-shaped field")
    out = np.zeros(v.shape[: grid.d] + v.shape[grid.d + 1:])
    h = grid.h
    for ax in range(grid.d):
        comp = np.take(v, ax, axis=grid.d)
        if grid.periodic:
            out += (np.roll(comp, -1, axis=ax) - np.roll(comp, 1, axis=ax)) / (2 * h)
        else:
            out += np.gradient(comp, h, axis=ax, edge_order=1)
    return out


def integrate(values, grid, at="nodes"):
    """Quadrature of a nodal or element field.

    Periodic grids use the rectangle (periodic trapezoid) rule, boxes the
    tensor trapezoid rule, element fields the element-centroid rule.  All
    three are exact for constants.

    Returns:
        A float for scalar fields, otherwise an array of component integrals.
    """
    if np.isscalar(values):
        return float(values) * grid.measure
    v = grid.check_field(np.asarray(values, dtype=float), at)
    if at == "nodes":
        nd = grid.d
        flat = v.reshape((grid.n_nodes,) + v.shape[nd:])
        w = grid.node_weights()
    elif at == "elements":
        nd = len(grid.element_shape)
        flat = v.reshape((grid.n_elements,) + v.shape[nd:])
        w = grid.element_weights()
    else:
        raise ValueError(f"unknown location {at!r}")
    out = np.tensordot(w, flat, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def mean(values, grid, at="nodes"):
    return integrate(values, grid, at) / grid.measure


def project_mean_zero(values, grid) -> np.ndarray:
    """Subtract the componentwise cell mean of a periodic nodal field."""
    if not grid.periodic:
        raise ValueError("mean-zero projection is defined on periodic grids only")
    v = grid.check_field(np.asarray(values, dtype=float))
    axes = tuple(range(grid.d))
    return v - v.mean(axis=axes, keepdims=True)


def element_gradient(values, grid) -> np.ndarray:
    """Element-wise gradient of a nodal field.

    Args:
        values: nodal field of shape ``grid.shape + (N,)`` or ``grid.shape``.

    Returns:
        Array ``(n_elements, d, N)`` (or ``(n_elements, d)`` for scalar input).
    """
    v = grid.check_field(np.asarray(values, dtype=float))
    scalar = v.ndim == grid.d
    flat = v.reshape(grid.n_nodes, -1)
    g = grid.gradient_matrix() @ flat
    g = g.reshape(grid.n_elements, grid.d, flat.shape[1])
    return g[..., 0] if scalar else g


def sample(fn, grid, at="nodes") -> np.ndarray:
    """Evaluate ``fn(points)`` with points of shape ``(n, d)`` and reshape onto the grid."""
    pts = grid.node_points() if at == "nodes" else grid.element_points()
    vals = np.asarray(fn(pts), dtype=float)
    shape = grid.shape if at == "nodes" else grid.element_shape
    return vals.reshape(shape + vals.shape[1:])
