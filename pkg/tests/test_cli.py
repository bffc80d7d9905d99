import json
import subprocess
import sys
from pathlib import Path

import pytest

from mtsmv.cli import main
from mtsmv.report import csv_body

GOLDEN = json.loads((Path(__file__).parent / "golden" / "paper_multipliers.json").read_text())


def _cfg(tmp_path, targets, **sim):
    d = {
        "problem": {
            "market": {"horizon": 2.0, "rate": 0.04, "drift": [0.12], "vol": [[0.2]]},
            "checkpoints": [0, 1, 2],
            "initial_wealth": 1.0,
            "targets": targets,
        },
        "simulation": {"n_paths": 400, "step": 0.01, "seed": 42, "record_step": 0.05, **sim},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return str(p)


def test_solve_bundled_matches_golden(tmp_path):
    assert main(["solve", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "multipliers.json").read_text())
    assert out["multipliers"]["mu"] == pytest.approx(GOLDEN["mu"], rel=1e-10)
    assert out["multipliers"]["lambda"] == pytest.approx(GOLDEN["lambda"], rel=1e-10)
    assert out["multipliers"]["mu"][1] == pytest.approx(1.9411, abs=1e-4)
    header = (tmp_path / "policy.csv").read_bytes().decode().split("\r\n")[1]
    assert header == "t,segment,target_level,direction_1,mean,variance"


def test_infeasible_exit_code(tmp_path, capsys):
    code = main(["solve", "-c", _cfg(tmp_path, [1.2, 1.1]), "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert '"index": 2' in err and '"inequality": "growth"' in err


def test_missing_config_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["solve", "-c", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"problem": ')
    assert main(["solve", "-c", str(p), "--out", str(tmp_path)]) == 1
    assert "bad.json:1:" in capsys.readouterr().err


def test_compare_in_window(tmp_path):
    cfg = _cfg(tmp_path, [1.1, 1.2214027581601699])
    assert main(["compare", "-c", cfg, "--out", str(tmp_path), "--no-timestamp"]) == 0
    cor = json.loads((tmp_path / "corollary.json").read_text())
    assert cor["in_window"] and cor["sum_dominance"]
    assert cor["var_star_1_lt_classical"] and cor["var_star_2_gt_classical"]
    for name in ("figure1.csv", "figure1.svg", "figure2.csv", "figure2.svg"):
        assert (tmp_path / name).exists()


def test_compare_ass1_violation(tmp_path):
    assert main(["compare", "-c", _cfg(tmp_path, [1.12, 1.2214027581601699]), "--out", str(tmp_path)]) == 2


def test_sweep_deterministic(tmp_path):
    cfg = _cfg(tmp_path, {"rate_multiples": [2.1, 5.0]}, n_paths=300)
    bodies = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["sweep", "1.145", "1.345", "0.04", "-c", cfg, "--out", str(out), "--no-timestamp"]) == 0
        bodies.append((out / "figure3.csv").read_bytes())
    assert bodies[0] == bodies[1]
    lines = bodies[0].decode().split("\r\n")
    assert lines[0] == "theta,L1,feasible,mdd_t1,mdd_t1_se,mdd_t2,mdd_t2_se"
    assert len([l for l in lines if l]) == 1 + 6


def test_sweep_all_infeasible(tmp_path):
    cfg = _cfg(tmp_path, {"rate_multiples": [2.1, 5.0]})
    assert main(["sweep", "0.1", "0.5", "0.2", "-c", cfg, "--out", str(tmp_path)]) == 2


def test_simulate_overrides_and_timestamps(tmp_path):
    cfg = _cfg(tmp_path, {"rate_multiples": [2.1, 5.0]})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "-c", cfg, "--out", str(a), "--seed", "3", "--paths", "200", "--samples", "--max-rows", "50"]) == 0
    assert main(["simulate", "-c", cfg, "--out", str(b), "--seed", "3", "--paths", "200"]) == 0
    ta, tb = ((d / "simulation.csv").read_bytes().decode() for d in (a, b))
    assert ta.startswith("# generated:")
    assert csv_body(ta) == csv_body(tb)
    rows = (a / "paths.csv").read_bytes().decode().split("\r\n")
    assert rows[1] == "path_id,t,value" and len([r for r in rows if r]) == 2 + 50
    report = json.loads((a / "simulation.json").read_text())
    assert report["config"]["seed"] == 3 and report["n_paths"] == 200


def test_format_selection_and_env_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MTSMV_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["solve", "--format", "json"]) == 0
    assert sorted(p.name for p in (tmp_path / "env").iterdir()) == ["multipliers.json"]


def test_verify(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--random", "10"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 7


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "mtsmv", "solve", "--out", str(tmp_path), "--format", "json"],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert "mu" in res.stdout
