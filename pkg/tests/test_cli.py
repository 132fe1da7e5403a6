import hashlib
import os
import subprocess
import sys

import pytest
from conftest import HIGH_LOAD

from semoff import marl
from semoff.cli import main
from semoff.metrics import EVAL_COLUMNS, SWEEP_COLUMNS, TRAIN_FIELDS, read_csv, read_jsonl

FAST = ["--profile", "fast", "--config", str(HIGH_LOAD)]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_missing_config_exit_2(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    assert main(["train", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_key_exit_2(tmp_path, capsys):
    assert main(["eval", "--set", "env.warp=9", "--out", str(tmp_path)]) == 2
    assert "env.warp" in capsys.readouterr().err
    assert main(["train", "--set", "novalue", "--out", str(tmp_path)]) == 2


def test_k_outside_table_exit_2(tmp_path, capsys):
    assert main(["sweep-k", "--k", "5,12", "--snapshots", "1", "--out", str(tmp_path)]) == 2
    assert "k=12" in capsys.readouterr().err


def test_missing_artifacts_exit_3(tmp_path):
    assert main(["compare", "--snapshots", "1", "--out", str(tmp_path)]) == 3
    assert main(["compare", "--mappo", str(tmp_path / "x"), "--dqn", str(tmp_path / "y"),
                 "--out", str(tmp_path)]) == 3
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--policy", "mappo", "--mappo", str(tmp_path / "empty"), "--out", str(tmp_path)]) == 3
    assert main(["eval", "--policy", "dqn", "--out", str(tmp_path)]) == 3


def test_numeric_failure_exit_4(tmp_path, monkeypatch):
    def diverge(*a, **k):
        raise marl.TrainingDiverged("loss became nan")
    monkeypatch.setattr(marl, "train", diverge)
    assert main(["train", "--out", str(tmp_path)]) == 4


def test_static_compare_rows_and_direction(tmp_path):
    out = tmp_path / "c"
    assert main(["compare", "--static-only", "--snapshots", "1", "--out", str(out)] + FAST) == 0
    rows = read_csv(out / "compare.csv", EVAL_COLUMNS)
    assert [r["policy"] for r in rows] == ["exhaustive", "local", "remote", "random"]
    energy = {r["policy"]: r["energy_J"] for r in rows}
    assert energy["local"] > energy["exhaustive"] and energy["local"] > energy["remote"]
    assert (out / "config.json").is_file()


def test_train_outputs_and_determinism(tmp_path):
    args = ["train", "--set", "ppo.episodes=4", "--set", "env.num_ues=2"] + FAST
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    run = tmp_path / "a" / "run_mappo_s0"
    rows = read_jsonl(run / "metrics.jsonl", TRAIN_FIELDS)
    assert [r["episode"] for r in rows] == [0, 1, 2, 3]
    assert sha(run / "metrics.jsonl") == sha(tmp_path / "b" / "run_mappo_s0" / "metrics.jsonl")
    assert '"ppo.episodes": 4' in (run / "config.json").read_text()
    assert (run / "agent_1" / "ckpt_4.bin").is_file()


def test_learned_compare_and_jobs_invariance(tmp_path):
    base = ["--set", "env.num_ues=2", "--set", "ppo.episodes=3", "--set", "dqn.episodes=3"] + FAST
    assert main(["train", "--out", str(tmp_path)] + base) == 0
    assert main(["train", "--algo", "dqn", "--out", str(tmp_path)] + base) == 0
    runs = ["--mappo", str(tmp_path / "run_mappo_s0"), "--dqn", str(tmp_path / "run_dqn_s0")]
    cmp = ["compare", "--snapshots", "3", "--seed", "0,1"] + runs + base
    assert main(cmp + ["--out", str(tmp_path / "j1")]) == 0
    assert main(cmp + ["--jobs", "2", "--out", str(tmp_path / "j2")]) == 0
    rows = read_csv(tmp_path / "j1" / "compare.csv", EVAL_COLUMNS)
    assert len(rows) == 6 * 3 * 2
    assert sha(tmp_path / "j1" / "compare.csv") == sha(tmp_path / "j2" / "compare.csv")
    assert main(["eval", "--policy", "mappo,local", "--snapshots", "2"] + runs + base
                + ["--out", str(tmp_path / "ev")]) == 0
    assert len(read_csv(tmp_path / "ev" / "eval.csv", EVAL_COLUMNS)) == 4


def test_sweep_schema_and_single_row(tmp_path):
    assert main(["sweep-k", "--k", "15", "--policy", "exhaustive", "--snapshots", "2",
                 "--out", str(tmp_path / "a")] + FAST) == 0
    assert main(["sweep-k", "--k", "15", "--policy", "exhaustive", "--snapshots", "2",
                 "--out", str(tmp_path / "b")] + FAST) == 0
    path = tmp_path / "a" / "sweep_k.csv"
    assert path.read_text().splitlines()[0] == "k,policy,mean_energy_J,std_energy_J,completion_rate"
    assert len(read_csv(path, SWEEP_COLUMNS)) == 1
    assert sha(path) == sha(tmp_path / "b" / "sweep_k.csv")


def test_sweep_with_training(tmp_path):
    assert main(["sweep-k", "--k", "10", "--policy", "local", "--train", "--snapshots", "1",
                 "--set", "ppo.episodes=2", "--set", "env.num_ues=2", "--out", str(tmp_path)] + FAST) == 0
    rows = read_csv(tmp_path / "sweep_k.csv", SWEEP_COLUMNS)
    assert [r["policy"] for r in rows] == ["local", "mappo"]
    assert (tmp_path / "k10" / "run_mappo_s0" / "metrics.jsonl").is_file()


def test_console_entry_point_and_log_env(tmp_path):
    env = dict(os.environ, SEMOFF_LOG="debug")
    proc = subprocess.run([sys.executable, "-m", "semoff", "compare", "--static-only", "--snapshots", "1",
                           "--out", str(tmp_path)], env=env, capture_output=True, text=True)
    assert proc.returncode == 0
    assert "INFO semoff: effective config" in proc.stderr
    bad = subprocess.run([sys.executable, "-m", "semoff", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
