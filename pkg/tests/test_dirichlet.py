import numpy as np
import pytest

from mohom.cell import effective_operator_table
from mohom.dirichlet import (
    convergence_study,
    solve_eps_problem,
    solve_homogenized,
    truncate,
    truncation_modulars,
)
from mohom.nfunction import RangeError, make_nfunction
from mohom.operator import make_operator
from mohom.pgrid import BoxGrid, PeriodicGrid
from mohom.twoscale import AlignmentError

LINEAR_13 = {"family": "linear", "a": {"kind": "piecewise", "values": [1, 3]}}
P3_18 = {"family": "p-weighted", "p": 3, "a": {"kind": "piecewise", "values": [1, 8]}}


def a13(y):
    return np.where(np.mod(y, 1.0) < 0.5, 1.0, 3.0)


def exact_eps_gradient(x, eps):
    """1D constant-flux oracle u' = (x + c) / a(x/eps) with zero boundary values."""
    inv = 1.0 / a13(x / eps)
    c = -np.sum(x * inv) / np.sum(inv)
    return (x + c) * inv


@pytest.fixture(scope="module")
def linear_table():
    return effective_operator_table(make_operator(LINEAR_13), np.linspace(-2, 2, 21),
                                    PeriodicGrid(1, 128))


def test_exact_1d_oscillatory_solution():
    g = BoxGrid(1, 1024)
    sol = solve_eps_problem(make_operator(LINEAR_13), 1 / 8, lambda x: x, g)
    x = g.element_points()[:, 0]          # midpoints: the centroid rule is exact per element
    assert np.max(np.abs(sol.grad[:, 0] - exact_eps_gradient(x, 1 / 8))) < 1e-8
    u = np.concatenate([[0.0], np.cumsum(exact_eps_gradient(x, 1 / 8) * g.h)])
    assert np.max(np.abs(sol.u[:, 0] - u)) < 1e-8
    assert sol.u[0, 0] == 0 and sol.u[-1, 0] == 0


def test_constant_load_gives_zero_solution():
    g = BoxGrid(1, 256)
    sol = solve_eps_problem(make_operator(P3_18), 1 / 4, 2.5, g)
    assert np.max(np.abs(sol.u)) < 1e-12


def test_eps_one_is_a_single_cell_problem():
    g = BoxGrid(1, 64)
    op = make_operator(LINEAR_13)
    sol = solve_eps_problem(op, 1.0, lambda x: x**2, g)
    # the homogenized driver samples a y-dependent operator at y = x, i.e. A frozen at eps = 1
    direct = solve_homogenized(op, lambda x: x**2, g)
    assert np.array_equal(sol.u, direct.u)


def test_misaligned_eps_rejected():
    g = BoxGrid(1, 256)
    op = make_operator(LINEAR_13)
    with pytest.raises(AlignmentError):
        solve_eps_problem(op, 0.3, 1.0, g)
    with pytest.raises(AlignmentError):
        solve_eps_problem(op, 1 / 32, 1.0, g)      # only 8 nodes per cell


def test_homogenized_closed_form(linear_table):
    g = BoxGrid(1, 1024)
    sol = solve_homogenized(linear_table, lambda x: x, g)
    x = g.node_points()[:, 0]
    assert np.max(np.abs(sol.u[:, 0] - (x**2 - x) / 3)) < 1e-8
    assert sol.u[256, 0] == pytest.approx(-1 / 16, abs=1e-10)


def test_homogenized_zero_load(linear_table):
    sol = solve_homogenized(linear_table, 0.0, BoxGrid(1, 64))
    assert np.all(sol.u == 0)


def test_homogenized_symmetry():
    op = make_operator(P3_18)
    table = effective_operator_table(op, np.linspace(-1, 1, 21), PeriodicGrid(1, 128))
    g = BoxGrid(1, 128)
    sol = solve_homogenized(table, lambda x: np.sin(2 * np.pi * x), g)
    # F odd about 1/2 makes u even about 1/2
    assert np.allclose(sol.u[:, 0], sol.u[::-1, 0], atol=1e-10)


def test_table_range_error_and_extension():
    op = make_operator(LINEAR_13)
    small = effective_operator_table(op, np.linspace(-0.1, 0.1, 5), PeriodicGrid(1, 64))
    g = BoxGrid(1, 64)
    with pytest.raises(RangeError):
        solve_homogenized(small, lambda x: 2 * x, g)
    sol = solve_homogenized(small, lambda x: 2 * x, g, extend=(op, PeriodicGrid(1, 64)))
    x = g.node_points()[:, 0]
    assert np.max(np.abs(sol.u[:, 0] - 2 * (x**2 - x) / 3)) < 1e-8


def test_energy_identity_2d():
    op = make_operator({"family": "variable-exponent",
                        "p": {"kind": "sinsin", "mean": 2.25, "amplitude": 0.25}})
    g = BoxGrid(2, 32)
    sol = solve_eps_problem(op, 1 / 2, lambda x: np.sin(2 * np.pi * x), g)
    assert sol.energy_identity_gap <= 1e-8 * (1 + abs(sol.load_energy))
    assert np.all(sol.u.reshape(g.shape)[g.boundary_mask()] == 0)


def test_truncation_examples():
    assert truncate(np.array([5.0]), 2) == pytest.approx([2.0])
    assert np.allclose(truncate(np.array([[3.0, 4.0]]), 2.5, vector=True), [[1.5, 2.0]], rtol=1e-15)
    v = np.array([-0.3, 0.2, 1.0])
    assert np.array_equal(truncate(v, 1.0), v)
    rng = np.random.default_rng(7)
    w = rng.standard_normal((20, 2)) * 3
    t = truncate(w, 1.5, vector=True)
    assert np.all(np.linalg.norm(t, axis=1) <= 1.5 * (1 + 1e-15))
    assert np.array_equal(truncate(t, 1.5, vector=True), t)
    with pytest.raises(ValueError):
        truncate(v, 0)


def test_truncation_modulars_decrease():
    op = make_operator(P3_18)
    g = BoxGrid(1, 256)
    sol = solve_eps_problem(op, 1 / 4, lambda x: x, g)
    M = make_nfunction({"family": "weighted_power", "p": 3,
                        "weight": {"kind": "piecewise", "values": [1, 8]}})
    levels, mods = truncation_modulars(M, sol, g)
    assert mods[0] > mods[1] > mods[2] == 0


def test_convergence_single_eps_has_no_trend(linear_table):
    rep = convergence_study(make_operator(LINEAR_13), linear_table, lambda x: x, [1 / 4],
                            BoxGrid(1, 256), diagnostics=False)
    d = rep.to_dict()
    assert len(d["rows"]) == 1
    assert "l1_errors_decrease" not in d and "uniform_bound_variation" not in d


def test_convergence_study_is_deterministic(linear_table, tmp_path):
    args = (make_operator(LINEAR_13), linear_table, lambda x: x, [1 / 4, 1 / 8], BoxGrid(1, 256))
    a = convergence_study(*args)
    b = convergence_study(*args)
    a.save(tmp_path / "a.txt")
    b.save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
