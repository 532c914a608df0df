import numpy as np
import pytest

from mohom.nfunction import (
    BoundarySaturationError,
    NFunction,
    RangeError,
    ScalarNFunction,
    TabulatedConvexFunction,
    biconjugate,
    conjugate,
    lower_convex_hull,
    luxemburg_norm,
    make_nfunction,
    modular,
    tabulate,
)
from mohom.pgrid import BoxGrid, PeriodicGrid

GRID = np.linspace(0.0, 8.0, 4001)


def _brute_conj(f, x, s):
    return np.max(s[:, None] * x[None, :] - f(x)[None, :], axis=1)


# ---------------------------------------------------------------- oracles first

def test_oracle_quartic_conjugate_by_brute_force():
    x = np.linspace(0, 4, 400001)
    assert _brute_conj(lambda t: t**4 / 4, x, np.array([1.0]))[0] == pytest.approx(0.75, abs=1e-9)


def test_oracle_exponential_conjugate_by_brute_force():
    x = np.linspace(0, 4, 400001)
    val = _brute_conj(lambda t: np.exp(t) - t - 1, x, np.array([np.e - 1]))[0]
    assert val == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- scalar N-functions

@pytest.mark.parametrize("m,big", [(ScalarNFunction.power(2), (1e6, 1e3)),
                                   (ScalarNFunction.power(3.5), (1e6, 1e3)),
                                   (ScalarNFunction.exponential(), (700.0, 100.0)),
                                   (ScalarNFunction.tlog(), (1e6, 1e3))])
def test_scalar_builtins_are_n_functions(m, big):
    assert m(0.0) == 0
    t = np.geomspace(1e-6, 1e6, 200)
    with np.errstate(over="ignore"):
        v = m(t)
        assert m(big[0]) / big[0] > m(big[1]) / big[1]
    v = v[np.isfinite(v)]
    assert np.all(np.diff(v) > 0)
    assert m(1e-6) / 1e-6 < 1e-3
    s, u = np.meshgrid(t[::10], t[::10])
    with np.errstate(over="ignore", invalid="ignore"):
        lhs, rhs = m((s + u) / 2), (m(s) + m(u)) / 2
    ok = np.isfinite(rhs)
    assert np.all(lhs[ok] <= rhs[ok] * (1 + 1e-12))


def test_scalar_conj_closed_forms():
    assert ScalarNFunction.power(4).conj(1.0) == pytest.approx(0.75, rel=1e-12)
    assert ScalarNFunction.exponential().conj(np.e - 1) == pytest.approx(1.0, rel=1e-10)


# ---------------------------------------------------------------- conjugate

def test_quadratic_self_conjugate():
    c = conjugate(ScalarNFunction.power(2), GRID, dual=np.linspace(0, 4, 41))
    assert c(np.array([0.0, 1.0, 2.0])) == pytest.approx([0.0, 0.5, 2.0], abs=1e-12)


def test_quartic_conjugate_matches_closed_form():
    c = conjugate(ScalarNFunction.power(4), GRID, dual=np.linspace(0, 100, 201))
    s = c.axes[0]
    assert np.max(np.abs(c.values - 0.75 * s ** (4 / 3)) / np.maximum(1, 0.75 * s ** (4 / 3))) < 1e-6
    assert c(1.0) == pytest.approx(0.75, rel=1e-6)


def test_exponential_conjugate_matches_closed_form():
    x = np.linspace(0, 6, 6001)
    dual = np.sort(np.append(np.linspace(0, 50, 501), np.e - 1))
    c = conjugate(ScalarNFunction.exponential(), x, dual=dual)
    s = c.axes[0]
    exact = (1 + s) * np.log1p(s) - s
    assert np.max(np.abs(c.values - exact)) < 1e-6
    assert c.values[np.argmin(np.abs(s - (np.e - 1)))] == pytest.approx(1.0, abs=1e-6)


def test_monotone_method_matches_brute_force():
    t = tabulate(ScalarNFunction.power(3), GRID)
    s = np.linspace(0, 30, 301)
    a = conjugate(t, dual=s, method="brute")
    b = conjugate(t, dual=s, method="monotone")
    assert np.allclose(a.values, b.values, atol=1e-13)


def test_saturation_detected_for_small_primal_range():
    t = tabulate(ScalarNFunction.power(2), np.linspace(0, 1, 101))
    with pytest.raises(BoundarySaturationError) as exc:
        conjugate(t, dual=np.linspace(0, 5, 51))
    assert exc.value.primal_point == pytest.approx(1.0)


def test_conjugation_is_order_reversing():
    m = tabulate(ScalarNFunction.power(2), GRID)
    n = tabulate(ScalarNFunction.power(2, scale=2.0), GRID)
    s = np.linspace(0, 6, 61)
    assert np.all(conjugate(n, dual=s).values <= conjugate(m, dual=s).values + 1e-12)


def test_conjugate_2d_quadratic():
    ax = np.linspace(-4, 4, 161)
    m = tabulate(lambda a, b: 0.5 * (a**2 + 2 * b**2), (ax, ax))
    d = np.linspace(-2, 2, 21)
    c = conjugate(m, dual=(d, d))
    S1, S2 = np.meshgrid(d, d, indexing="ij")
    assert np.max(np.abs(c.values - 0.5 * (S1**2 + S2**2 / 2))) < 1e-6


def test_fenchel_young_on_product_lattice():
    m = ScalarNFunction.power(3)
    c = conjugate(m, GRID, dual=np.linspace(0, 40, 401))
    x = np.linspace(0, 6, 61)
    s = np.linspace(0, 30, 61)
    gap = m(x)[:, None] + c(s)[None, :] - x[:, None] * s[None, :]
    assert gap.min() >= -1e-6


# ---------------------------------------------------------------- biconjugate

def test_biconjugate_fixes_convex_table():
    x = np.linspace(-3, 3, 601)
    t = TabulatedConvexFunction((x,), x**2)
    b = biconjugate(t)
    assert np.max(np.abs(b.values - x**2) / np.maximum(1, x**2)) < 1e-6


def test_biconjugate_of_nonconvex_is_hull():
    x = np.linspace(-2, 4, 1201)
    f = np.minimum(x**2, (x - 2) ** 2 + 1)
    b = biconjugate(TabulatedConvexFunction((x,), f))
    hull = lower_convex_hull(x, f)
    assert np.max(np.abs(b.values - hull)) < 1e-9
    mid = np.argmin(np.abs(x - 1.0))
    assert b.values[mid] < f[mid] - 0.1
    assert np.all(b.values <= f + 1e-12)


def test_biconjugate_zero_and_idempotent():
    x = np.linspace(-1, 1, 101)
    assert np.all(biconjugate(TabulatedConvexFunction((x,), np.zeros_like(x))).values == 0)
    f = TabulatedConvexFunction((x,), np.cos(3 * x))
    b1 = biconjugate(f)
    b2 = biconjugate(b1)
    assert np.max(np.abs(b1.values - b2.values)) < 1e-9


def test_hull_brute_force_oracle():
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0, 1, 40))
    f = rng.standard_normal(40)
    h = lower_convex_hull(x, f)
    # every chord between samples lies above the hull
    for i in range(40):
        for j in range(i + 1, 40):
            lam = (x[i:j + 1] - x[i]) / (x[j] - x[i])
            assert np.all(h[i:j + 1] <= (1 - lam) * f[i] + lam * f[j] + 1e-12)


def test_tabulated_range_and_roundtrip(tmp_path):
    x = np.linspace(0, 2, 11)
    t = TabulatedConvexFunction((x,), x**2, even=True, meta={"name": "sq"})
    with pytest.raises(RangeError):
        t(3.0)
    assert t(-1.0) == pytest.approx(1.0)
    t.save(tmp_path / "t.txt")
    u = TabulatedConvexFunction.load(tmp_path / "t.txt")
    assert np.array_equal(u.values, t.values) and u.even


# ---------------------------------------------------------------- spatial N-functions

def test_nfunction_periodic_and_even():
    M = make_nfunction({"family": "variable_exponent",
                        "p": {"kind": "sin2", "mean": 2.25, "amplitude": 0.25}})
    y = np.array([[0.3], [1.3], [-0.7]])
    xi = np.array([[1.7], [1.7], [1.7]])
    v = M(y, xi)
    assert v[0] == v[1] == v[2]
    assert np.array_equal(M(y, xi), M(y, -xi))


def test_nfunction_sandwich_samples():
    M = make_nfunction({"family": "weighted_sum", "terms": [
        {"kind": "power", "p": 2.5, "weight": {"kind": "cos", "mean": 2, "amplitude": 1}},
        {"kind": "power", "p": 2}]})
    y = np.linspace(0, 1, 17)[:, None]
    t = np.geomspace(1e-3, 1e3, 61)
    Y, T = np.meshgrid(y[:, 0], t, indexing="ij")
    vals = M(Y[..., None], T[..., None])
    assert np.all(M.m1(T) <= vals * (1 + 1e-10))
    assert np.all(vals <= M.m2(T) * (1 + 1e-10))


def test_gradient_matches_finite_differences():
    M = make_nfunction({"family": "exponential", "weight": {"kind": "sin", "mean": 2, "amplitude": 1}})
    rng = np.random.default_rng(3)
    y = rng.uniform(0, 1, (20, 2))
    xi = rng.standard_normal((20, 2))
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (M(y, xi + e) - M(y, xi - e)) / (2 * h)
        assert np.allclose(M.gradient(y, xi)[:, k], fd, rtol=1e-6, atol=1e-8)


def test_pointwise_conjugate_is_young_equality():
    M = make_nfunction({"family": "weighted_power", "p": 3,
                        "weight": {"kind": "piecewise", "values": [1, 8]}})
    y = np.array([[0.2], [0.7]])
    xi = np.array([[1.5], [-0.4]])
    eta = M.gradient(y, xi)
    assert np.allclose(M(y, xi) + M.conj(y, eta), np.sum(xi * eta, axis=-1), rtol=1e-10)


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        make_nfunction({"family": "nope"})


# ---------------------------------------------------------------- modulars and norms

def test_modular_examples():
    sq = make_nfunction({"family": "power", "p": 2, "scale": 2.0})      # |xi|^2
    g = PeriodicGrid(1, 64)
    assert modular(sq, np.zeros(g.shape), g) == 0
    assert modular(sq, np.full(g.shape, 3.0), g) == pytest.approx(9.0)
    w = make_nfunction({"family": "weighted_power", "p": 2,
                        "weight": {"kind": "sin", "mean": 4, "amplitude": 2}})  # (2 + sin)|xi|^2
    assert modular(w, np.ones(g.shape), g) == pytest.approx(2.0, abs=1e-12)


def test_luxemburg_examples():
    sq = make_nfunction({"family": "power", "p": 2, "scale": 2.0})
    g = BoxGrid(1, 32)
    assert luxemburg_norm(sq, np.zeros(g.shape), g) == 0
    assert luxemburg_norm(sq, np.full(g.shape, -2.5), g) == pytest.approx(2.5, rel=1e-8)
    x = g.node_points()[:, 0]
    v = np.sin(3 * x) + x
    n1 = luxemburg_norm(sq, v, g)
    assert luxemburg_norm(sq, 7 * v, g) == pytest.approx(7 * n1, rel=1e-8)
    assert modular(sq, v / n1, g) == pytest.approx(1.0, abs=1e-8)


def test_luxemburg_triangle_inequality():
    M = make_nfunction({"family": "variable_exponent",
                        "p": {"kind": "sin2", "mean": 2.5, "amplitude": 0.5}})
    g = PeriodicGrid(1, 64)
    rng = np.random.default_rng(5)
    for _ in range(5):
        u, v = rng.standard_normal((2,) + g.shape)
        lhs = luxemburg_norm(M, u + v, g)
        assert lhs <= (luxemburg_norm(M, u, g) + luxemburg_norm(M, v, g)) * (1 + 1e-4)


def test_nfunction_class_exported():
    assert isinstance(make_nfunction({"family": "tlog"}), NFunction)
