from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from mdyn.cli import ConfigError, RunConfig, main

MAPS = Path(__file__).resolve().parent.parent / "maps"


def run(tmp_path, *argv, out="out"):
    target = tmp_path / out
    code = main([*argv, "--out", str(target)])
    return code, target


def load(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def ulam_bundle(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ulam")
    code, out = run(tmp, "analyze", str(MAPS / "ulam.json"), "--horizon", "120", "--gap-T", "10",
                    "--growth-depth", "100", "--chain-depth", "40", "--branch-depth", "40")
    return code, out


def test_analyze_ulam_bundle(ulam_bundle):
    code, out = ulam_bundle
    assert code in (0, 2)
    ce = load(out / "ce.json")
    lam = ce["critical_values"]["0"]["lambda_series"] if "critical_values" in ce else None
    rows = (out / "ce.csv").read_text().strip().splitlines()[1:]
    assert len(rows) == 120
    assert all(abs(float(r.split(",")[1].split("@")[0]) - math.log(4)) < 1e-12 for r in rows)
    assert lam is None or all(abs(v - math.log(4)) < 1e-12 for v in lam)
    manifest = load(out / "manifest.json")
    for name in ("kneading.txt", "chain_c0.csv", "sr.json", "tsr.json", "gaps.json", "shrink.json",
                 "growth.json", "lemma.json", "kappa_scatter.tsv", "plots.tsv", "map.json"):
        assert name in manifest["files"], name
    assert "birkhoff.json" not in manifest["files"]


def test_analyze_tent_tsr_zero_above_one(tmp_path):
    code, out = run(tmp_path, "analyze", "tent", "--horizon", "100", "--gap-T", "10", "--growth-depth", "50",
                    "--chain-depth", "20", "--branch-depth", "20")
    assert code in (0, 2)
    tsr = load(out / "tsr.json")
    cells = (out / "tsr_c0.csv").read_text().strip().splitlines()
    assert cells[0].startswith("n,")
    for row in cells[1:]:
        assert all(float(v.split("@")[0]) == 0 for v in row.split(",")[1:])
    assert tsr["horizon"] == 100


def test_analyze_horizon_zero_is_config_error(tmp_path, capsys):
    code, _ = run(tmp_path, "analyze", "ulam", "--horizon", "0")
    assert code == 1
    assert "horizon" in capsys.readouterr().err


def test_unknown_command_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1


def test_missing_map_file_exits_one(tmp_path):
    code, _ = run(tmp_path, "analyze", str(tmp_path / "none.json"), "--horizon", "5")
    assert code == 1


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig("analyze", ["ulam"], horizon=0)
    with pytest.raises(ConfigError):
        RunConfig("analyze", ["ulam"], seeds=-1)


@pytest.mark.parametrize("pair,expected", [("pair_tent_ulam", 0), ("pair_l3_f3", 0), ("pair_mismatched", 2)])
def test_conjugacy_exit_codes(tmp_path, pair, expected):
    code, out = run(tmp_path, "conjugacy", str(MAPS / f"{pair}.json"), "--horizon", "100", "--grid", "200")
    assert code == expected
    inv = load(out / "invariance.json")
    if expected == 0:
        assert inv["tsr_delta"] == 0 and inv["combinatorics_match"]
    else:
        assert not inv["combinatorics_match"]


def test_oracle_tent_passes_and_corruption_fails(tmp_path):
    args = ["oracle", "tent", "--horizon", "200", "--samples", "100", "--grid", "20000"]
    code, out = run(tmp_path, *args, out="clean")
    assert code == 0
    assert all(load(out / "manifest.json")["status"]["checks"].values())
    code, out = run(tmp_path, *args, "--corrupt", out="bad")
    assert code == 2
    # shifted shadowing times break the separation identity and the monotone pairing alike
    assert "septime" in load(out / "manifest.json")["status"]["failed"]


def test_calibrate_command(tmp_path):
    code, out = run(tmp_path, "calibrate", "f3")
    assert code == 0
    cal = load(out / "calibration.json")
    assert cal["delta0"] == "1/8" and cal["N0"] == 3


def test_reports_are_byte_identical(tmp_path):
    args = ["analyze", "logistic", "--horizon", "150", "--gap-T", "10", "--growth-depth", "80",
            "--chain-depth", "30", "--branch-depth", "30", "--seeds", "2", "--birkhoff-horizon", "500"]
    _, a = run(tmp_path, *args, out="a")
    _, b = run(tmp_path, *args, out="b")
    files_a = sorted(p.name for p in a.iterdir())
    assert files_a == sorted(p.name for p in b.iterdir())
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
