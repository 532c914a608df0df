import json

import numpy as np
import pytest
import yaml

from mohom.cli import ConfigError, load_config, main, make_load, parse_config
from mohom.io import read_table

LINEAR_13 = {"family": "linear", "a": {"kind": "piecewise", "values": [1, 3]}}


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg, sort_keys=False) if isinstance(cfg, dict) else cfg)
    return str(p)


def _run(tmp_path, command, cfg, out="out"):
    code = main([command, "--config", _write(tmp_path, cfg), "--out", str(tmp_path / out)])
    return code, tmp_path / out


def _summary(out):
    return json.loads((out / "summary.json").read_text())


@pytest.mark.parametrize("p", [2, 4])
def test_conjugate_power_closed_forms(tmp_path, p):
    cfg = {"problem": {"nfunction": {"family": "power", "p": p}},
           "numerics": {"dual": 5.0}}
    code, out = _run(tmp_path, "conjugate", cfg)
    assert code == 0
    s = _summary(out)
    assert s["max_rel_error_interior"] <= 1e-6
    assert s["biconjugate_max_rel_change"] <= 1e-6
    cols, _ = read_table(out / "conjugate.txt")
    q = p / (p - 1)
    assert np.allclose(cols["conjugate"], cols["s"] ** q / q, rtol=1e-6, atol=1e-9)
    assert (out / "primal.txt").exists() and (out / "biconjugate.txt").exists()


def test_conjugate_exponential(tmp_path):
    cfg = {"problem": {"nfunction": {"family": "exponential"}},
           "numerics": {"dual": 20.0, "grid": {"radius": 10.0}}}
    code, out = _run(tmp_path, "conjugate", cfg)
    assert code == 0
    assert _summary(out)["max_rel_error_interior"] <= 1e-6


def test_reruns_are_byte_identical(tmp_path):
    cfg = {"problem": {"operator": LINEAR_13, "F": {"kind": "linear"}},
           "numerics": {"xi": {"min": -1, "max": 1, "n": 5}, "K": 64, "eps": [0.25, 0.125]}}
    path = _write(tmp_path, cfg)
    files = {}
    for run in (0, 1):
        out = tmp_path / "same"
        assert main(["converge", "--config", path, "--out", str(out)]) == 0
        files[run] = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
    assert files[0] == files[1]
    s = _summary(tmp_path / "same")
    assert s["status"] == ["converged", "converged"]
    assert s["l1_errors"][1] < s["l1_errors"][0]


def test_every_subcommand_runs(tmp_path):
    base = {"problem": {"operator": LINEAR_13, "nfunction": {"family": "power", "p": 3},
                        "F": {"kind": "linear"}},
            "numerics": {"xi": [-1.0, 0.0, 1.0], "K": 64, "eps": [0.25], "checks": ["delta2"],
                         "refine_check": False}}
    expected = {"conjugate": "conjugate.txt", "check-conditions": "conditions.json",
                "cell": "cells.txt", "effective": "hatA.txt",
                "homogenize": "u_homogenized.txt", "converge": "convergence.txt"}
    for cmd, fname in expected.items():
        code, out = _run(tmp_path, cmd, base, out=cmd)
        assert code == 0, cmd
        assert (out / fname).exists() and (out / "config.resolved.yaml").exists()
        assert _summary(out)["command"] == cmd


def test_zero_load_gives_zero_solution(tmp_path):
    cfg = {"problem": {"operator": LINEAR_13, "F": 0.0},
           "numerics": {"xi": [-1.0, 0.0, 1.0], "K": 64, "eps": [0.25]}}
    code, out = _run(tmp_path, "homogenize", cfg)
    assert code == 0
    cols, _ = read_table(out / "u_eps_00.txt")
    assert np.all(np.abs(cols["u1"]) == 0.0)
    code, out = _run(tmp_path, "converge", cfg, out="conv")
    assert code == 0 and len(_summary(out)["eps"]) == 1


def test_failing_check_is_not_an_error(tmp_path):
    step = {"kind": "step", "values": [2, 3], "at": 0.5}
    cfg = {"problem": {"nfunction": {"family": "variable_exponent", "p": step}},
           "numerics": {"checks": ["m4"]}}
    code, out = _run(tmp_path, "check-conditions", cfg)
    assert code == 0
    rep = json.loads((out / "conditions.json").read_text())
    assert rep["m4"]["passes"] is False


def test_config_error_reports_line(tmp_path, capsys):
    text = "problem:\n  d: 1\nnumerics:\n  K: 64\n  bogus: 3\n"
    code = main(["cell", "--config", _write(tmp_path, text), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "cfg.yaml:5:" in err and "bogus" in err


def test_config_errors():
    with pytest.raises(ConfigError, match=r"x\.yaml:\d+: invalid YAML"):
        parse_config("a:\n  b: [1,\n", "x.yaml")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("problem:\n  d: 1\n  d: 2\n")
    with pytest.raises(ConfigError, match="unknown block"):
        from mohom.cli import resolve_config
        cfg, lines = parse_config("solver:\n  tol: 1\n")
        resolve_config(cfg, lines)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_misaligned_eps_is_a_hard_error(tmp_path, capsys):
    cfg = {"problem": {"operator": LINEAR_13, "F": 1.0},
           "numerics": {"xi": [-1.0, 0.0, 1.0], "K": 64, "eps": [0.3], "n": 64}}
    code, _ = _run(tmp_path, "homogenize", cfg)
    assert code == 1
    assert "AlignmentError" in capsys.readouterr().err


def test_tol_override_is_echoed(tmp_path):
    cfg = {"problem": {"nfunction": {"family": "power", "p": 2}}}
    path = _write(tmp_path, cfg)
    out = tmp_path / "o"
    assert main(["conjugate", "--config", path, "--out", str(out), "--tol", "1e-7"]) == 0
    echo = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert echo["numerics"]["tol"] == 1e-7


def test_make_load_forms():
    x = np.array([[0.25], [0.5]])
    assert np.allclose(make_load(2.0, 1, 1)(x), 2.0)
    assert np.allclose(make_load({"kind": "linear", "scale": 3}, 1, 1)(x), 3 * x)
    assert np.allclose(make_load({"kind": "sin"}, 1, 1)(x)[:, 0], [1.0, 0.0], atol=1e-15)
    x2 = np.array([[0.1, 0.2]])
    assert make_load({"kind": "linear"}, 2, 1)(x2).shape == (1, 2)
    with pytest.raises(ValueError):
        make_load({"kind": "cubic"}, 1, 1)
