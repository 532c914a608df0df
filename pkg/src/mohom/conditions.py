"""Sampled reporters for structural conditions on N-functions.

None of the constants involved is fixed a priori, so every checker *fits*
the smallest constant compatible with the samples and declares a pass when
that constant is finite and stable under refinement of the sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nfunction import (
    RangeError,
    TabulatedConvexFunction,
    biconjugate,
    conjugate,
    log_linear_grid,
)


@dataclass
class Report:
    """Outcome of a sampled check."""

    name: str
    passes: bool
    stats: dict = field(default_factory=dict)
    witness: dict | None = None
    notes: str = ""

    def to_dict(self):
        return {"name": self.name, "passes": bool(self.passes), "stats": self.stats,
                "witness": self.witness, "notes": self.notes}


def y_lattice(d, n, lo=None, hi=None):
    """``n**d`` points; the unit cell ``[0, 1)^d`` by default, else a closed box."""
    if lo is None:
        ax = [np.arange(n) / n] * d
    else:
        ax = [np.linspace(lo[k], hi[k], n) for k in range(d)]
    mesh = np.meshgrid(*ax, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _directions(M, m):
    """Unit sample directions in ``R^m``."""
    if getattr(M, "radial", True):
        e = np.zeros(m)
        e[0] = 1.0
        return e[None, :]
    dirs = [np.eye(m)[k] for k in range(m)]
    if m >= 2:
        dirs.append(np.ones(m) / np.sqrt(m))
        v = np.ones(m)
        v[1] = -1
        dirs.append(v / np.sqrt(m))
    return np.array(dirs)


def _m_of(M, m):
    return getattr(M, "m", None) or m


def _values_on(M, ys, ts, dirs):
    """``V[i, k, j] = M(y_i, t_k * dir_j)``."""
    xi = ts[None, :, None, None] * dirs[None, None, :, :]
    yb = ys[:, None, None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        return M(yb, xi)


def check_delta2(M, d=1, m=1, n_y=16, t_min=1e-3, t_max=1e3, per_decade=20, slack=1.01):
    """Doubling condition ``M(y, 2 xi) <= c M(y, xi) + h``.

    Reports ``sup M(y, 2 xi) / (M(y, xi) + 1)`` and passes when the sup over
    the top decade of ``|xi|`` does not exceed the sup over the previous
    decade (up to ``slack``), i.e. the ratio has stopped growing.
    """
    m = _m_of(M, m)
    ys = y_lattice(d, n_y)
    n_t = int(round(per_decade * np.log10(t_max / t_min))) + 1
    ts = np.geomspace(t_min, t_max, n_t)
    dirs = _directions(M, m)
    with np.errstate(over="ignore", invalid="ignore"):
        V1 = _values_on(M, ys, ts, dirs)
        V2 = _values_on(M, ys, 2 * ts, dirs)
        R = V2 / (V1 + 1.0)
    R = np.where(np.isnan(R), np.inf, R)
    per_t = R.max(axis=(0, 2))
    top = ts >= t_max / 10
    prev = (ts >= t_max / 100) & (ts < t_max / 10)
    sup_top, sup_prev = per_t[top].max(), per_t[prev].max()
    passes = bool(np.isfinite(sup_top) and sup_top <= slack * sup_prev)
    i, k, j = np.unravel_index(np.argmax(np.where(np.isfinite(R), R, np.inf)), R.shape)
    witness = None if passes else {"y": ys[i].tolist(), "xi": (ts[k] * dirs[j]).tolist(),
                                   "ratio": float(R[i, k, j])}
    return Report("delta2", passes,
                  {"worst_ratio": float(per_t.max()), "sup_top_decade": float(sup_top),
                   "sup_previous_decade": float(sup_prev),
                   "ratio_profile": {"t": ts.tolist(), "ratio": per_t.tolist()}},
                  witness)


def check_m2_sandwich(M, d=1, m=1, n_y=16, t_min=1e-3, t_max=1e3, n_t=61, rtol=1e-10):
    """Envelope condition ``m1(|xi|) <= M(y, xi) <= m2(|xi|)`` on a sample lattice."""
    m = _m_of(M, m)
    ys = y_lattice(d, n_y)
    ts = np.geomspace(t_min, t_max, n_t)
    dirs = _directions(M, m)
    V = _values_on(M, ys, ts, dirs)
    lo = M.m1(ts)[None, :, None]
    hi = M.m2(ts)[None, :, None]
    r_lo = V / lo
    r_hi = V / hi
    ok = (V >= lo * (1 - rtol)) & (V <= hi * (1 + rtol))
    passes = bool(ok.all())
    witness = None
    if not passes:
        i, k, j = np.argwhere(~ok)[0]
        witness = {"y": ys[i].tolist(), "xi": (ts[k] * dirs[j]).tolist(),
                   "M": float(V[i, k, j]), "m1": float(lo[0, k, 0]), "m2": float(hi[0, k, 0])}
    return Report("m2", passes, {"min_ratio_to_m1": float(r_lo.min()),
                                 "max_ratio_to_m2": float(r_hi.max())}, witness)


def _pairs(ys, max_sep):
    """All point pairs with ``0 < |y1 - y2|_periodic <= max_sep``."""
    i, j = np.triu_indices(len(ys), k=1)
    diff = ys[i] - ys[j]
    diff = diff - np.round(diff)
    r = np.sqrt(np.sum(diff**2, axis=-1))
    keep = (r > 0) & (r <= max_sep + 1e-15)
    return i[keep], j[keep], r[keep]


def _m4_exponent(M, d, m, n_y, ts, B0, max_sep):
    ys = y_lattice(d, n_y)
    dirs = _directions(M, m)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logV = np.log(_values_on(M, ys, ts, dirs))          # (ny, nt, ndir)
    i, j, r = _pairs(ys, max_sep)
    scale = 1.0 / np.log(np.maximum(ts, B0))                # (nt,)
    best, arg = 0.0, None
    big_best, big_arg = 0.0, None
    big = ts >= B0
    ratio_max = 1.0
    chunk = max(1, int(2e6 // (len(ts) * len(dirs))))
    for a in range(0, len(i), chunk):
        ii, jj, rr = i[a:a + chunk], j[a:a + chunk], r[a:a + chunk]
        dlog = np.abs(logV[ii] - logV[jj])                  # (np, nt, ndir)
        ratio_max = max(ratio_max, float(np.exp(np.max(dlog))) if dlog.size else 1.0)
        alpha = np.abs(np.log(rr))[:, None, None] * dlog * scale[None, :, None]
        if alpha.size and np.max(alpha) > best:
            best = float(np.max(alpha))
            p, k, q = np.unravel_index(np.argmax(alpha), alpha.shape)
            hi_first = logV[ii[p], k, q] >= logV[jj[p], k, q]
            y1, y2 = (ys[ii[p]], ys[jj[p]]) if hi_first else (ys[jj[p]], ys[ii[p]])
            arg = {"y1": y1.tolist(), "y2": y2.tolist(), "xi": (ts[k] * dirs[q]).tolist(),
                   "ratio": float(np.exp(dlog[p, k, q])), "separation": float(rr[p])}
        if alpha.size and big.any() and np.max(alpha[:, big]) > big_best:
            sub = alpha[:, big]
            big_best = float(np.max(sub))
            p, k, q = np.unravel_index(np.argmax(sub), sub.shape)
            k = np.flatnonzero(big)[k]
            hi_first = logV[ii[p], k, q] >= logV[jj[p], k, q]
            y1, y2 = (ys[ii[p]], ys[jj[p]]) if hi_first else (ys[jj[p]], ys[ii[p]])
            big_arg = {"y1": y1.tolist(), "y2": y2.tolist(), "xi": (ts[k] * dirs[q]).tolist(),
                       "ratio": float(np.exp(dlog[p, k, q])), "separation": float(rr[p])}
    if arg is not None:
        arg["large_xi"] = big_arg
    return best, arg, ratio_max


def check_m4_log_holder(M, d=1, m=1, n_y=32, levels=3, t_min=1e-3, t_max=1e3, n_t=61,
                        B0=np.e, max_sep=0.5, stable_rtol=0.10):
    """Log-Hoelder type condition on ratios ``M(y1, xi) / M(y2, xi)``.

    For every sample the minimal exponent
    ``alpha = |log|y1 - y2|| * log(ratio) / log(max(|xi|, B0))`` is computed;
    its supremum is the fitted ``A`` (with ``B = B0``).  The check passes when
    the fitted ``A`` is finite and changes by less than ``stable_rtol`` between
    the two finest of ``levels`` nested y-lattices (``n_y``, ``2 n_y``, ...).
    """
    m = _m_of(M, m)
    ts = np.geomspace(t_min, t_max, n_t)
    fits, witness, ratio_max = [], None, 1.0
    for lev in range(levels):
        A, w, rmax = _m4_exponent(M, d, m, n_y * 2**lev, ts, B0, max_sep)
        fits.append(A)
        witness, ratio_max = w, rmax
    A = fits[-1]
    drift = abs(fits[-1] - fits[-2]) / max(fits[-1], 1e-300) if levels > 1 and A > 1e-12 else 0.0
    passes = bool(np.isfinite(A) and drift <= stable_rtol)
    return Report("m4", passes,
                  {"fitted_A": A, "fitted_B": float(B0), "A_by_level": fits,
                   "lattice_sizes": [n_y * 2**k for k in range(levels)],
                   "relative_drift": drift, "max_ratio": ratio_max},
                  None if passes else witness)


@dataclass(frozen=True)
class CubeCovering:
    """Cubes of edge ``2 delta`` tiling ``[0, 1]^d`` and their concentric enlargements.

    The last cube along an axis may overhang ``1``; periodicity makes that
    harmless.
    """

    d: int
    delta: float

    @property
    def n_per_axis(self):
        return int(np.ceil(1.0 / (2 * self.delta) - 1e-12))

    @property
    def centers(self):
        c = (2 * np.arange(self.n_per_axis) + 1) * self.delta
        mesh = np.meshgrid(*([c] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def edge(self):
        return 2 * self.delta

    @property
    def enlarged_edge(self):
        return 4 * self.delta

    def cube_points(self, j, n):
        c = self.centers[j]
        return y_lattice(self.d, n, c - self.delta, c + self.delta)

    def enlarged_points(self, j, n):
        c = self.centers[j]
        return y_lattice(self.d, n, c - 2 * self.delta, c + 2 * self.delta)


def _radial_profiles(M, ys, grid):
    with np.errstate(over="ignore"):
        return M.profile(ys[:, None, :], grid[None, :])


def check_m3_cube_condition(M, deltas=None, d=1, m=1, n_enlarged=32, n_cube=8,
                            t_min=1e-3, t_max=1e3, G=np.e, C=1.0, E=None, grid=None,
                            stable_rtol=0.10, grid2d=41):
    """Cube condition against the biconjugate of the local infimum.

    For each ``delta`` the covering is built, ``M_j`` is the minimum of
    ``M(y, .)`` over an ``n_enlarged**d`` lattice of the enlarged cube and its
    biconjugate is compared with ``M(y, .)`` for ``y`` on an ``n_cube**d``
    lattice of the cube.  With ``C``, ``E``, ``G`` fixed the smallest
    exponent ``D`` is fitted per ``delta``:
    ``D = sup |log(E delta)| * log(ratio / C) / log(max(|xi|, G))``.

    Passes when every ``D`` is finite and the sequence does not grow by more
    than ``stable_rtol`` as ``delta`` decreases.
    """
    if E is None:
        E = 4.0 * np.sqrt(d)
    delta0 = 1.0 / (8.0 * np.sqrt(d))
    if deltas is None:
        deltas = [delta0 / 2, delta0 / 4, delta0 / 8]
    deltas = sorted((float(x) for x in deltas), reverse=True)
    if any(x >= delta0 + 1e-15 or E * x > 0.5 + 1e-12 for x in deltas):
        raise ValueError(f"deltas must lie below delta0 = {delta0:.6g}")
    m = _m_of(M, m)
    per_delta, witness = [], None
    max_ratio = 1.0
    if getattr(M, "radial", True):
        t = log_linear_grid(radius=max(t_max, 1.0) * 1.5) if grid is None else np.asarray(grid)
        sample = (t >= t_min) & (t <= t_max)
    else:
        ax = np.linspace(-t_max, t_max, grid2d)
        X1, X2 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([X1, X2], axis=-1)
        norm = np.sqrt(X1**2 + X2**2)
        sample = (norm >= t_min) & (norm <= t_max)
    for delta in deltas:
        cov = CubeCovering(d, delta)
        D = 0.0
        for j in range(len(cov.centers)):
            yq = cov.enlarged_points(j, n_enlarged)
            yc = cov.cube_points(j, n_cube)
            if getattr(M, "radial", True):
                Mj = _radial_profiles(M, yq, t).min(axis=0)
                env = biconjugate(TabulatedConvexFunction((t,), Mj, even=True)).values
                Vc = _radial_profiles(M, yc, t)
                tt = t
            else:
                with np.errstate(over="ignore"):
                    Mj = np.min(M(yq[:, None, None, :], pts[None]), axis=0)
                env = biconjugate(TabulatedConvexFunction((ax, ax), Mj)).values
                with np.errstate(over="ignore"):
                    Vc = M(yc[:, None, None, :], pts[None])
                tt = norm
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = Vc / env[None]
            ratio = ratio[:, sample]
            ttv = tt[sample]
            rmax = float(np.max(ratio))
            max_ratio = max(max_ratio, rmax)
            with np.errstate(divide="ignore", invalid="ignore"):
                lr = np.log(np.maximum(ratio / C, 1.0))
                lr = np.where(lr < 1e-9, 0.0, lr)       # tabulation rounding
                Dk = abs(np.log(E * delta)) * lr / np.log(np.maximum(ttv, G))[None, :]
            dk = float(np.max(Dk))
            if dk > D:
                D = dk
                p, k = np.unravel_index(np.argmax(Dk), Dk.shape)
                witness = {"delta": delta, "cube_center": cov.centers[j].tolist(),
                           "y": yc[p].tolist(), "abs_xi": float(ttv[k]),
                           "ratio": float(ratio[p, k])}
        per_delta.append(D)
    growth = [per_delta[i + 1] / per_delta[i] - 1 if per_delta[i] > 1e-12 else
              (0.0 if per_delta[i + 1] <= 1e-12 else np.inf)
              for i in range(len(per_delta) - 1)]
    passes = bool(np.all(np.isfinite(per_delta)) and all(g <= stable_rtol for g in growth))
    return Report("m3", passes,
                  {"deltas": deltas, "fitted_D": per_delta, "C": C, "E": float(E), "G": float(G),
                   "max_ratio": max_ratio, "growth": [float(g) for g in growth]},
                  None if passes else witness)


def radial_reduction_check(M, deltas=None, d=1, margin=0.20, m4_kwargs=None, m3_kwargs=None):
    """Check that a passing log-Hoelder fit implies a passing cube fit for radial ``M``.

    The cube exponent is expected to be at most twice the log-Hoelder exponent
    (with ``E = 4 sqrt(d)`` and ``G = B``), up to ``margin``.
    """
    if not getattr(M, "radial", False):
        raise ValueError("radial_reduction_check needs a radial N-function")
    r4 = check_m4_log_holder(M, d=d, **(m4_kwargs or {}))
    r3 = check_m3_cube_condition(M, deltas, d=d, G=r4.stats["fitted_B"], **(m3_kwargs or {}))
    A = r4.stats["fitted_A"]
    D = max(r3.stats["fitted_D"])
    bound = 2 * A * (1 + margin)
    consistent = (not r4.passes) or (r3.passes and D <= bound + 1e-12)
    return Report("radial_reduction", bool(consistent),
                  {"m4_passes": r4.passes, "m3_passes": r3.passes, "fitted_A": A,
                   "max_fitted_D": D, "bound": bound, "m4": r4.to_dict(), "m3": r3.to_dict()},
                  None if consistent else {"fitted_A": A, "max_fitted_D": D})


def conjugate_slice(M, y, eta, dual_radius=None, n=4001):
    """``M*(y, eta)`` from a tabulated conjugate of the slice ``M(y, .)``.

    Radial slices are tabulated on a half-line grid; the separable family on a
    2D grid.  Raises :class:`RangeError` when ``|eta|`` exceeds ``dual_radius``.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    y = np.asarray(y, dtype=float)
    s = np.sqrt(np.sum(eta**2, axis=-1))
    if dual_radius is not None and np.any(s > dual_radius * (1 + 1e-12)):
        k = int(np.argmax(s))
        raise RangeError(f"eta = {eta[k].tolist()} outside the tabulated dual range "
                         f"|eta| <= {dual_radius}")
    if getattr(M, "radial", True):
        smax = max(float(s.max()), 1e-12) * 1.05
        top = 1.0
        while M.profile(y, top, order=1) < smax:
            top *= 2
        t = np.linspace(0.0, 1.2 * top, n)
        tab = TabulatedConvexFunction((t,), M.profile(y, t), even=True)
        dual = np.unique(np.concatenate([[0.0, smax], s]))
        star = conjugate(tab, dual=dual)
        return star(s)
    out = np.empty(len(eta))
    for k, e in enumerate(eta):
        out[k] = float(M.conj(y, e))
    return out


def young_gap(M, y, xi, eta, dual_radius=None, pointwise=False):
    """``M(y, xi) + M*(y, eta) - xi . eta`` with ``M*`` from a tabulated slice."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    if pointwise:
        mstar = M.conj(y, eta)
    else:
        mstar = conjugate_slice(M, y, eta.reshape(-1, eta.shape[-1]), dual_radius)
        mstar = mstar.reshape(eta.shape[:-1])
    return M(y, xi) + mstar - np.sum(xi * eta, axis=-1)
