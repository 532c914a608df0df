import numpy as np
import pytest

from mohom.cell import (
    effective_operator_table,
    effective_potential,
    polar_nodes,
    refine_line_nodes,
    solve_cell,
    verify_hatA_properties,
)
from mohom.nfunction import RangeError, make_nfunction
from mohom.operator import make_operator
from mohom.pgrid import PeriodicGrid, integrate, mean
from mohom.solver import ConvergenceError, SolverConfig

LINEAR_13 = {"family": "linear", "a": {"kind": "piecewise", "values": [1, 3]}}
P3_18 = {"family": "p-weighted", "p": 3, "a": {"kind": "piecewise", "values": [1, 8]}}
QUAD_13 = {"family": "weighted_power", "p": 2, "weight": {"kind": "piecewise", "values": [1, 3]}}


def harmonic_oracle(a_values, p):
    """1D constant-flux closed form (mean of a^(-1/(p-1)))^-(p-1) for equal-length pieces."""
    a = np.asarray(a_values, dtype=float)
    return np.mean(a ** (-1.0 / (p - 1))) ** (-(p - 1))


def test_oracle_values():
    assert harmonic_oracle([1, 3], 2) == pytest.approx(1.5, rel=1e-15)
    assert harmonic_oracle([1, 8], 3) == pytest.approx((0.5 + 0.5 * 8**-0.5) ** -2, rel=1e-15)
    assert harmonic_oracle([1, 8], 3) == pytest.approx(2.183278857474363, rel=1e-14)


def test_constant_coefficient_has_zero_corrector():
    sol = solve_cell(make_operator({"family": "linear"}), 0.7, PeriodicGrid(1, 64))
    assert np.max(np.abs(sol.corrector)) < 1e-14
    assert sol.hat_A == pytest.approx([0.7], rel=1e-14)
    assert sol.residual < 1e-12


def test_linear_piecewise_harmonic_mean():
    g = PeriodicGrid(1, 256)
    sol = solve_cell(make_operator(LINEAR_13), 1.0, g)
    assert sol.hat_A[0] == pytest.approx(1.5, rel=1e-10)
    assert abs(mean(sol.corrector[..., 0], g)) < 1e-15
    # corrector gradient in closed form: xi (hat a / a(y) - 1)
    y = g.element_points()[:, 0]
    a = np.where(y < 0.5, 1.0, 3.0)
    assert np.allclose(sol.corrector_gradient.reshape(-1), 1.5 / a - 1, atol=1e-10)


def test_p3_constant_flux_oracle():
    sol = solve_cell(make_operator(P3_18), 1.0, PeriodicGrid(1, 512))
    assert sol.hat_A[0] == pytest.approx(harmonic_oracle([1, 8], 3), rel=1e-8)


def test_energy_bounds_and_flux_identity():
    op = make_operator(P3_18)
    g = PeriodicGrid(1, 128)
    sol = solve_cell(op, 1.3, g)
    y = g.element_points()
    w = g.element_weights()
    zero_corrector = float(np.dot(w, op.energy_density(y, np.full((len(w), 1), 1.3))))
    assert sol.energy <= zero_corrector + 1e-12
    grads = 1.3 + sol.corrector_gradient.reshape(-1, 1)
    assert sol.hat_A[0] * 1.3 == pytest.approx(float(np.dot(w, np.sum(op(y, grads) * grads, -1))),
                                               rel=1e-9)


def test_two_dimensional_cell_residual_and_mean():
    op = make_operator({"family": "variable-exponent",
                        "p": {"kind": "sinsin", "mean": 2.25, "amplitude": 0.25}})
    g = PeriodicGrid(2, 32)
    sol = solve_cell(op, [0.6, -0.2], g)
    assert sol.residual <= 1e-8
    assert np.all(np.abs(mean(sol.corrector, g)) < 1e-14)


def test_vector_valued_cell_decouples_for_diagonal_operator():
    op = make_operator(LINEAR_13)
    g = PeriodicGrid(1, 64)
    sol = solve_cell(op, np.array([[1.0, -2.0]]), g, N=2)
    assert sol.hat_A == pytest.approx([1.5, -3.0], rel=1e-10)


def test_nonconvergence_reports_best_residual():
    cfg = SolverConfig(tol=1e-30, max_iter=2, continuation=False, fallback_ncg=False)
    with pytest.raises(ConvergenceError) as exc:
        solve_cell(make_operator(P3_18), 1.0, PeriodicGrid(1, 64), cfg)
    assert np.isfinite(exc.value.best_residual)


def test_table_linear_oddness_and_zero():
    xi = np.linspace(-2, 2, 9)
    t = effective_operator_table(make_operator(LINEAR_13), xi, PeriodicGrid(1, 128))
    assert np.allclose(t.hat_A[:, 0], 1.5 * xi, rtol=1e-6, atol=1e-14)
    assert t(np.array([[0.0]]))[0, 0] == 0
    assert np.allclose(t(np.array([[-1.3]])), -t(np.array([[1.3]])), rtol=1e-12)
    with pytest.raises(RangeError):
        t(np.array([[2.5]]))


def test_table_odd_symmetry_p3():
    xi = np.linspace(-1, 1, 5)
    t = effective_operator_table(make_operator(P3_18), xi, PeriodicGrid(1, 128))
    assert np.allclose(t.hat_A[::-1, 0], -t.hat_A[:, 0], rtol=1e-12)


def test_polar_table_roundtrip(tmp_path):
    op = make_operator({"family": "linear"})
    t = effective_operator_table(op, {"radii": [0.5, 1.0], "n_angles": 8}, PeriodicGrid(2, 8))
    assert len(t.nodes) == len(polar_nodes(np.array([0, 0.5, 1.0]), 8))
    x = np.array([[0.3, -0.4], [0.1, 0.2]])
    assert np.allclose(t(x), x, atol=1e-10)
    t.save(tmp_path / "hatA.txt")
    assert (tmp_path / "hatA.txt").read_text().startswith("# mohom-table")


def test_effective_potential_spatially_constant():
    M = make_nfunction({"family": "power", "p": 3})
    xi = np.linspace(-2, 2, 11)
    pot = effective_potential(M, xi, PeriodicGrid(1, 64))
    assert np.max(np.abs(pot.f.values - np.abs(xi) ** 3 / 3)) <= 1e-8


def test_effective_potential_quadratic():
    M = make_nfunction(QUAD_13)
    xi = np.linspace(-2, 2, 41)
    pot = effective_potential(M, xi, PeriodicGrid(1, 128))
    assert np.allclose(pot.f.values, 0.75 * xi**2, atol=1e-8)
    eta = pot.eta[:, 0]
    assert np.allclose(pot.fstar_direct, eta**2 / 3, atol=1e-6)
    assert np.allclose(pot.fstar_values_at_eta(), eta**2 / 3, atol=1e-6)
    assert pot.f(0.0) == 0 and pot.fstar(0.0) == pytest.approx(0, abs=1e-12)


def test_effective_potential_consistency_and_young():
    M = make_nfunction({"family": "weighted_power", "p": 3,
                        "weight": {"kind": "piecewise", "values": [1, 8]}})
    xi = np.linspace(-2, 2, 41)
    g = PeriodicGrid(1, 128)
    pot = effective_potential(M, xi, g)
    # f equals the cell energy at the same node
    sol = solve_cell(make_operator({"family": "gradient", "nfunction": M.to_config()}), xi[30], g)
    assert pot.f.values[30] == pytest.approx(sol.energy, rel=1e-10)
    s = pot.fstar.axes[0]
    gap = pot.f.values[:, None] + pot.fstar.values[None, :] - xi[:, None] * s[None, :]
    assert gap.min() >= -1e-6
    # midpoint convexity on the grid
    f = pot.f.values
    assert np.all(f[1:-1] <= 0.5 * (f[:-2] + f[2:]) + 1e-12)
    # sandwich m1 <= f <= m2
    t = np.abs(xi)
    assert np.all(M.m1(t) <= f + 1e-9) and np.all(f <= M.m2(t) + 1e-9)


def test_verify_hatA_linear_exact_constants():
    op = make_operator(LINEAR_13)
    M = make_nfunction(QUAD_13)
    g = PeriodicGrid(1, 128)
    xi = np.linspace(-2, 2, 21)
    pot = effective_potential(M, xi, g)
    rep = verify_hatA_properties(op, pot.table, pot, grid=g)
    assert rep.stats["coercivity_c"] == pytest.approx(1.0, abs=1e-6)
    assert rep.stats["monotonicity_min"] == pytest.approx(1.5, rel=1e-6)
    assert 1.7 <= rep.stats["jump_ratio"] <= 2.5


def test_refine_line_nodes_inserts_midpoints():
    assert np.allclose(refine_line_nodes(np.array([0.0, 1.0, 3.0])), [0, 0.5, 1, 2, 3])


def test_refinement_in_k_changes_hat_a_little():
    op = make_operator(P3_18)
    a = solve_cell(op, 1.0, PeriodicGrid(1, 256)).hat_A[0]
    b = solve_cell(op, 1.0, PeriodicGrid(1, 512)).hat_A[0]
    assert abs(a - b) < 1e-6 * abs(b)


def test_zero_corrector_bound_in_2d():
    M = make_nfunction({"family": "variable_exponent",
                        "p": {"kind": "sinsin", "mean": 2.25, "amplitude": 0.25}})
    op = make_operator({"family": "gradient", "nfunction": M.to_config()})
    g = PeriodicGrid(2, 16)
    xi = np.array([0.8, 0.3])
    sol = solve_cell(op, xi, g)
    y = g.node_points()
    assert sol.energy <= integrate(M(y, np.broadcast_to(xi, y.shape)).reshape(g.shape), g) + 1e-8
