import csv
import json

import numpy as np
import pytest

from eikscat.acceptance import run_criterion
from eikscat.cli import PRESETS, config_hash, run, validate_config
from eikscat.errors import ConfigInvalid

EIKONAL = {
    "format": "eikscat/1",
    "task": "eikonal",
    "model": {"kind": "radial_power", "dim": 2, "amplitude": 0.1, "sigma": 0.6},
    "lambda": 1.0,
    "eps": 0.2,
    "N": 256,
    "sample": {"n": 3, "r_min": 10.0, "r_max": 200.0, "seed": 1},
    "oracle": True,
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_verify_zero_preset_passes(tmp_path):
    assert run(["verify", "--preset", "zero_verify", "--out", str(tmp_path)]) == 0
    checks = json.loads((tmp_path / "verify.json").read_text())
    assert checks and all(c["passed"] for c in checks)
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "PASS"


def test_eikonal_matches_oracle_columns(tmp_path):
    out = tmp_path / "out"
    assert run(["eikonal", "--config", _write(tmp_path, EIKONAL), "--out", str(out), "--workers", "1"]) == 0
    rows = _rows(out / "eikonal.csv")
    assert len(rows) == 3
    key = next(k for k in rows[0] if k.startswith("rel_err"))
    assert max(float(r[key]) for r in rows) < 1e-6


def test_eikonal_output_is_deterministic(tmp_path):
    cfg = _write(tmp_path, EIKONAL)
    run(["eikonal", "--config", cfg, "--out", str(tmp_path / "a"), "--workers", "1"])
    run(["eikonal", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "1"])
    assert (tmp_path / "a" / "eikonal.csv").read_bytes() == (tmp_path / "b" / "eikonal.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("timings"), mb.pop("timings")
    assert ma == mb
    assert ma["inputs_sha256"] == config_hash(ma["config"])


def test_malformed_json_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["eikonal", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize("patch", [{"lambda": -1.0}, {"eps": "big"}, {"model": {"kind": "nope"}},
                                   {"format": "other/9"}])
def test_invalid_config_exit_code(tmp_path, patch):
    cfg = {**EIKONAL, **patch}
    assert run(["eikonal", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_validate_collects_all_errors():
    with pytest.raises(ConfigInvalid) as exc:
        validate_config({**EIKONAL, "lambda": -1.0, "N": 3}, "eikonal")
    fields = {f for f, _ in exc.value.errors}
    assert {"lambda", "N"} <= fields


def test_unknown_preset_and_task(tmp_path):
    assert run(["eikonal", "--preset", "nope", "--out", str(tmp_path)]) == 2
    assert run(["bogus"]) == 2


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    validate_config(PRESETS[name], PRESETS[name]["task"])


def test_flow_task_outputs(tmp_path):
    cfg = {"format": "eikscat/1", "task": "flow", "model": {"kind": "anisotropic", "dim": 2},
           "lambda": 0.5, "eps": 0.2, "directions": 4, "s_max": 200.0, "samples": 20,
           "sphere_map": {"nodes": 32, "s_max": 200.0}}
    out = tmp_path / "flow"
    code = run(["flow", "--config", _write(tmp_path, cfg), "--out", str(out), "--emit-gnuplot"])
    assert code in (0, 1)
    for name in ("trajectories.csv", "sphere_map.csv", "flow.json", "manifest.json"):
        assert (out / name).exists()
    rows = _rows(out / "trajectories.csv")
    assert {"s", "Phi1", "Phi2", "m_lambda"} <= set(rows[0])
    assert any(p.suffix == ".gp" for p in out.iterdir())


def test_gft_task_outputs(tmp_path):
    cfg = {"format": "eikscat/1", "task": "gft", "model": {"kind": "zero", "dim": 2}, "lambda": 0.5,
           "eps": 0.2, "grid": {"L": 30.0, "n": 256}, "epsilons": [0.0], "recipes": ["radial", "cesaro"]}
    out = tmp_path / "gft"
    run(["gft", "--config", _write(tmp_path, cfg), "--out", str(out)])
    rep = json.loads((out / "gft.json").read_text())
    assert rep
    rows = _rows(out / "profiles.csv")
    assert len(rows) > 16


def test_sabotaged_eikonal_criterion_fails():
    good = run_criterion(1, "quick")
    bad = run_criterion(1, "quick", sabotage=True)
    assert good.passed
    assert not bad.passed
    assert "FAIL" in bad.line()


def test_shipped_configs_match_presets():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for name, preset in PRESETS.items():
        assert json.loads((root / f"{name}.json").read_text()) == preset
