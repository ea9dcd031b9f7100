import csv
import json

import pytest

from volterra_ldp.cli import main
from volterra_ldp.config import parse_config
from volterra_ldp.exceptions import ValidationError

MFOLD = """
model:
  kernel: {family: mfold, m: 1}
  alpha: 1.0
  alpha_tilde: 1.0
conditioning:
  mode: functional
  functions: [{type: indicator}, {type: linear_decay}]
  x: [0.2, 0.1]
ladder: {values: [0.1, 0.01, 0.001]}
limits: {points: [[1.0, 1.0], [1.0, 0.5]]}
rate: {h_csv: h.csv}
probe: {N: 2000, delta: 0.05}
grids: {probe_points: 16}
"""


def _setup(tmp_path, text=MFOLD):
    (tmp_path / "run.yaml").write_text(text)
    with open(tmp_path / "h.csv", "w") as fh:
        fh.write("t,h\n" + "".join(f"{k / 8},{k / 8}\n" for k in range(1, 9)))
    return str(tmp_path / "run.yaml")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_cov_brownian_table(tmp_path):
    cfg = _setup(tmp_path, "grids: {cov: [0.25, 0.5, 1.0]}\n")
    assert main(["cov", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "cov.csv")
    assert len(rows) == 6
    for r in rows:
        assert float(r["value"]) == min(float(r["t"]), float(r["s"]))


def test_cov_functional_with_zero_alpha_matches_none(tmp_path):
    base = "model: {kernel: {family: fbm, H: 0.75}, alpha: 0.0, alpha_tilde: 1.0}\n"
    a = _setup(tmp_path, base)
    main(["cov", "--config", a, "--out", str(tmp_path / "a")])
    b = _setup(tmp_path, base + "conditioning: {mode: functional, functions: [{type: indicator}]}\n")
    main(["cov", "--config", b, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "cov.csv").read_bytes() == (tmp_path / "b" / "cov.csv").read_bytes()


def test_cov_path_mode_reduces_variance(tmp_path):
    (tmp_path / "psi.csv").write_text("u,psi\n0,0\n0.5,0.3\n1.0,0.1\n")
    cfg = _setup(tmp_path, "model: {kernel: {family: fbm, H: 0.75}, alpha: 1.0, alpha_tilde: 1.0}\n"
                           "conditioning: {mode: path, psi_csv: psi.csv}\ngrids: {cov: [1.0]}\n")
    assert main(["cov", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert float(_rows(tmp_path / "o" / "cov.csv")[0]["value"]) < 1.0


def test_limits_fbm_closed_form_equals_ratio(tmp_path):
    cfg = _setup(tmp_path, "model: {kernel: {family: fbm, H: 0.75}}\nladder: {values: [0.1, 0.01]}\n"
                           "limits: {quantities: [kbar]}\n")
    assert main(["limits", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    for r in _rows(tmp_path / "o" / "limits.csv"):
        assert float(r["ratio"]) == pytest.approx(float(r["closed_form"]), rel=1e-9)
        assert r["converged"] == "true"


def test_limits_mfold_converged_and_wrong_gamma(tmp_path):
    cfg = _setup(tmp_path)
    assert main(["limits", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "limits.csv")
    kbar = [r for r in rows if r["quantity"] == "kbar"]
    assert all(r["converged"] == "true" for r in kbar)
    text = MFOLD.replace("limits: {points: [[1.0, 1.0], [1.0, 0.5]]}", "limits: {gamma_exp: 0.25, quantities: [kbar]}")
    cfg = _setup(tmp_path, text)
    assert main(["limits", "--config", cfg, "--out", str(tmp_path / "w")]) == 0
    assert all(r["converged"] == "false" for r in _rows(tmp_path / "w" / "limits.csv"))


def test_rate_mfold(tmp_path):
    cfg = _setup(tmp_path)
    assert main(["rate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "rate.json").read_text())
    assert res["value"] == pytest.approx(1.0, rel=1e-8) and res["in_rkhs"] is True


def test_rate_off_span(tmp_path):
    cfg = _setup(tmp_path)
    with open(tmp_path / "h2.csv", "w") as fh:
        fh.write("t,h\n" + "".join(f"{k / 8},{(k / 8) ** 2}\n" for k in range(1, 9)))
    assert main(["rate", "--config", cfg, "--out", str(tmp_path / "o"), "--h", str(tmp_path / "h2.csv")]) == 0
    assert json.loads((tmp_path / "o" / "rate.json").read_text())["in_rkhs"] is False


def test_probe_zero_delta(tmp_path):
    cfg = _setup(tmp_path, MFOLD.replace("delta: 0.05", "delta: 0.0"))
    assert main(["probe", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert all(float(r["p_hat"]) == 1.0 for r in _rows(tmp_path / "o" / "probe.csv"))


def test_fit_speed(tmp_path):
    cfg = _setup(tmp_path, "model: {kernel: {family: fbm, H: 0.6}}\n")
    assert main(["fit-speed", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "speed.json").read_text())["slope"] == pytest.approx(1.2, abs=0.02)


@pytest.mark.parametrize("cmd", ["cov", "limits", "rate", "probe", "fit-speed"])
def test_rerun_is_byte_identical(tmp_path, cmd):
    cfg = _setup(tmp_path)
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        assert main([cmd, "--config", cfg, "--out", str(d), "--seed", "9"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]


def test_seed_override_changes_probe(tmp_path):
    cfg = _setup(tmp_path)
    main(["probe", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["probe", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "probe.csv").read_bytes() != (tmp_path / "b" / "probe.csv").read_bytes()


def test_paper_literal_flag_changes_path_limit(tmp_path):
    text = ("model: {kernel: {family: fbm, H: 0.75}, alpha: 1.0, alpha_tilde: 2.0}\n"
            "ladder: {values: [0.1, 0.01]}\nlimits: {quantities: [upsilon], points: [[1.0, 1.0]]}\n")
    cfg = _setup(tmp_path, text)
    main(["limits", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["limits", "--config", cfg, "--out", str(tmp_path / "b"), "--paper-literal-coefficients"])
    a = float(_rows(tmp_path / "a" / "limits.csv")[0]["closed_form"])
    b = float(_rows(tmp_path / "b" / "limits.csv")[0]["closed_form"])
    assert b > a


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  kernel: {family: fbm}\n  colour: red\n")
    assert main(["cov", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "line" in err and "colour" in err
    assert main(["cov", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["nope", "--config", str(bad)]) == 2
    cfg = _setup(tmp_path, "model: {kernel: {family: mfold, m: 1}}\nconditioning: {mode: functional, "
                           "functions: [{type: indicator}, {type: indicator}]}\n")
    assert main(["cov", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    cfg = _setup(tmp_path)
    assert main(["cov", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "-1"]) == 2


def test_parse_config_defaults():
    cfg = parse_config("")
    assert cfg.seed == 0 and cfg.conditioning.mode == "none" and len(cfg.ladder.values) == 7
    with pytest.raises(ValidationError):
        parse_config("- 1\n- 2\n")
    with pytest.raises(ValidationError):
        parse_config("conditioning: {mode: path}\n")
