import numpy as np
import pytest

from mohom.coefficients import CoefficientError
from mohom.operator import make_operator, verify_coercivity_A3, verify_monotonicity_A4

LINEAR_13 = {"family": "linear", "a": {"kind": "piecewise", "values": [1, 3]}}
P3_18 = {"family": "p-weighted", "p": 3, "a": {"kind": "piecewise", "values": [1, 8]}}


def _lattice(rng, n=50, m=1):
    return rng.uniform(-2, 3, (n, 1)), rng.standard_normal((n, m)) * 3


def test_linear_unit_is_identity(rng):
    op = make_operator({"family": "linear"})
    y, xi = _lattice(rng)
    assert np.array_equal(op(y, xi), xi)


def test_p_weighted_definition(rng):
    op = make_operator(P3_18)
    y, xi = _lattice(rng)
    a = np.where(np.mod(y, 1) < 0.5, 1.0, 8.0)
    assert np.allclose(op(y, xi), a * np.abs(xi) * xi, rtol=1e-14)


def test_gradient_family_matches_fd(rng):
    op = make_operator({"family": "gradient", "nfunction": {
        "family": "weighted_power", "p": 2, "weight": {"kind": "sin", "mean": 2, "amplitude": 1}}})
    y, xi = _lattice(rng)
    expect = (2 + np.sin(2 * np.pi * y)) * xi
    assert np.allclose(op(y, xi), expect, rtol=1e-12)
    h = 1e-6
    fd = (op.energy_density(y, xi + h) - op.energy_density(y, xi - h)) / (2 * h)
    assert np.allclose(op(y, xi)[:, 0], fd, rtol=1e-6)


@pytest.mark.parametrize("cfg", [LINEAR_13, P3_18,
                                 {"family": "variable-exponent",
                                  "p": {"kind": "sinsin", "mean": 2.25, "amplitude": 0.25}}])
def test_zero_and_oddness(cfg):
    op = make_operator(cfg)
    d = 2 if "sinsin" in str(cfg) else 1
    rng = np.random.default_rng(2)
    y = rng.uniform(0, 1, (30, d))
    xi = rng.standard_normal((30, d))
    assert np.all(op(y, np.zeros_like(xi)) == 0)
    assert np.array_equal(op(y, -xi), -op(y, xi))


def test_unknown_family_and_bad_samples():
    with pytest.raises(ValueError):
        make_operator({"family": "unknown"})
    with pytest.raises(CoefficientError):
        make_operator({"family": "linear", "a": {"kind": "samples", "values": [1, 2, 3],
                                                 "endpoint": True}})


def test_coercivity_quadratic_and_p3():
    assert verify_coercivity_A3(make_operator({"family": "linear"})).stats["fitted_c"] == \
        pytest.approx(1.0, abs=1e-6)
    op = make_operator({"family": "p-weighted", "p": 3})
    assert verify_coercivity_A3(op).stats["fitted_c"] == pytest.approx(1.0, abs=1e-4)


def test_coercivity_refinement_stable():
    op = make_operator(P3_18)
    r = verify_coercivity_A3(op)
    assert r.passes and r.stats["relative_drift"] < 0.05


def test_monotonicity_examples():
    op = make_operator({"family": "p-weighted", "p": 3})
    y = np.zeros((1, 1))
    ip = (op(y, np.array([[2.0]])) - op(y, np.array([[1.0]]))) * (2 - 1)
    assert ip[0, 0] == pytest.approx(3.0)
    r = verify_monotonicity_A4(make_operator(LINEAR_13))
    assert r.passes and r.stats["min_normalized"] == pytest.approx(1.0, rel=1e-9)
    grad = make_operator({"family": "gradient", "nfunction": {"family": "exponential"}})
    assert verify_monotonicity_A4(grad).passes


def test_rotated_linear_is_monotone_not_gradient():
    op = make_operator({"family": "rotated-linear", "a": 1.0, "b": 0.5})
    assert not op.is_gradient
    r = verify_monotonicity_A4(op, d=2, m=2)
    assert r.passes and r.stats["min_normalized"] == pytest.approx(1.0, rel=1e-9)
