import numpy as np
import pytest

from mohom import conditions as C
from mohom.nfunction import RangeError, make_nfunction

SQ = {"family": "power", "p": 2, "scale": 2.0}                       # |xi|^2
HALF_SQ = {"family": "power", "p": 2}                               # |xi|^2 / 2
LIPSCHITZ = {"family": "variable_exponent", "normalized": False,
             "p": {"kind": "sin2", "mean": 2.0, "amplitude": 0.5}}  # p = 2 + 0.5 sin^2(pi y)
STEP = {"family": "variable_exponent", "normalized": False,
        "p": {"kind": "step", "values": [2, 3], "at": 0.5}}
WEIGHTED = {"family": "weighted_power", "p": 2, "normalized": False,
            "weight": {"kind": "sin", "mean": 2, "amplitude": 1}}   # (2 + sin 2 pi y)|xi|^2
SUM_EXAMPLE = {"family": "weighted_sum", "terms": [
    {"kind": "power", "p": 2.5, "normalized": False,
     "weight": {"kind": "cos", "mean": 2, "amplitude": 1}}]}


def test_lipschitz_coefficient_matches_intended_exponent():
    M = make_nfunction(LIPSCHITZ)
    y = np.array([[0.0], [0.5]])
    assert M(y, np.array([[2.0], [2.0]])) == pytest.approx([4.0, 2**2.5], rel=1e-14)


def test_delta2_examples():
    r = C.check_delta2(make_nfunction(SQ))
    assert r.passes and r.stats["worst_ratio"] == pytest.approx(4.0, rel=1e-5)
    ex = make_nfunction({"family": "exponential"})
    r = C.check_delta2(ex)
    assert not r.passes and r.witness is not None
    y, t = np.zeros((1, 1)), np.array([[30.0]])
    assert ex(y, 2 * t)[0] / (ex(y, t)[0] + 1) > 1e6
    assert C.check_delta2(make_nfunction({"family": "tlog"})).passes


def test_m2_sandwich_for_builtins():
    for cfg in (SQ, LIPSCHITZ, WEIGHTED, SUM_EXAMPLE):
        r = C.check_m2_sandwich(make_nfunction(cfg))
        assert r.passes, cfg


def test_m4_constant_ratio_exactly_one():
    r = C.check_m4_log_holder(make_nfunction(SQ))
    assert r.passes
    assert r.stats["max_ratio"] == 1.0
    assert r.stats["fitted_A"] == 0.0


def test_m4_lipschitz_exponent_stable():
    r = C.check_m4_log_holder(make_nfunction(LIPSCHITZ))
    assert r.passes
    assert r.stats["relative_drift"] < 0.10
    # the sup sits at |xi| = 1e-3 on pairs with |p(y1) - p(y2)| = sin(pi r) / 2, so
    # A = log(1e3) * max_r |log r| sin(pi r) / 2
    r_ = np.linspace(1e-4, 0.5, 200001)
    exact = np.log(1e3) * np.max(-np.log(r_) * 0.5 * np.sin(np.pi * r_))
    assert r.stats["fitted_A"] == pytest.approx(exact, rel=1e-4)


def test_m4_step_fails_with_witness():
    M = make_nfunction(STEP)
    r = C.check_m4_log_holder(M)
    assert not r.passes
    w = r.witness
    assert {"y1", "y2", "xi", "ratio"} <= set(w)
    # the witness pair straddles a jump of the periodic exponent
    p = lambda y: 2 if (y % 1.0) < 0.5 else 3  # noqa: E731
    assert p(w["y1"][0]) != p(w["y2"][0])
    y1, y2 = np.array([[0.49]]), np.array([[0.51]])
    t = np.array([[1e3]])
    assert M(y2, t)[0] / M(y1, t)[0] == pytest.approx(1e3)


def test_cube_covering_partitions_unit_cube():
    cov = C.CubeCovering(2, 1 / 16)
    assert cov.n_per_axis == 8
    assert cov.edge == pytest.approx(1 / 8)
    assert cov.enlarged_edge == pytest.approx(2 * cov.edge)
    c = cov.centers
    assert len(c) == 64 and np.allclose(np.sort(np.unique(c[:, 0])), (np.arange(8) + 0.5) / 8)


def test_m3_examples():
    assert C.check_m3_cube_condition(make_nfunction(SQ)).passes
    r = C.check_m3_cube_condition(make_nfunction(WEIGHTED))
    assert r.passes
    assert r.stats["growth"][-1] <= 0.10
    assert not C.check_m3_cube_condition(make_nfunction(STEP)).passes


def test_m3_rejects_large_delta():
    with pytest.raises(ValueError):
        C.check_m3_cube_condition(make_nfunction(SQ), deltas=[0.5])


@pytest.mark.parametrize("cfg", [SQ, WEIGHTED, SUM_EXAMPLE])
def test_radial_reduction(cfg):
    r = C.radial_reduction_check(make_nfunction(cfg))
    assert r.passes
    assert r.stats["m4_passes"] and r.stats["m3_passes"]
    assert r.stats["max_fitted_D"] <= r.stats["bound"]


def test_young_gap_examples():
    M = make_nfunction(HALF_SQ)
    y = np.zeros(1)
    assert C.young_gap(M, y, np.array([1.0]), np.array([1.0])) == pytest.approx(0.0, abs=1e-8)
    assert C.young_gap(M, y, np.array([1.0]), np.array([3.0])) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(RangeError):
        C.young_gap(M, y, np.array([1.0]), np.array([50.0]), dual_radius=10.0)


def test_young_gap_lattice_nonnegative():
    M = make_nfunction(LIPSCHITZ)
    for yv in (0.0, 0.3):
        for xi in np.linspace(-3, 3, 7):
            for eta in np.linspace(-5, 5, 7):
                g = C.young_gap(M, np.array([yv]), np.array([xi]), np.array([eta]))
                assert g >= -1e-6
