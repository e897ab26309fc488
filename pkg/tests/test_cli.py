import csv
import subprocess
import sys

import numpy as np
import pytest

from ludor.cli import format_config, load_config, main, parse_config_text, spec_from_mapping
from ludor.data import densest_segment, load_dataset
from ludor.errors import ConfigurationError
from ludor.harness import ExperimentSpec, load_report
from ludor.nn import load_checkpoint
from oracles import brute_force_segment, carve_survivors

TINY_CFG = """\
# tiny run for the command-line tests
env = pointmass-2d
algo = ludor-td3bc
seeds = [0]
max_timesteps = 30
eval_freq = 10
n_episodes = 2
labeled.n = 1500
labeled.carves = [{"dim": 0, "removal_ratio": 1.0}]
unlabeled.n = 3000
unlabeled.fraction = 0.1
hidden = [16, 16]
batch_size = 32
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return p


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -- config grammar ------------------------------------------------------------


def test_parse_config_values():
    got = parse_config_text('a = 3\nb = 0.5 # note\nc = [64, 64]\nd = true\ne = pendulum-swingup\n\n# x\n')
    assert got == {"a": 3, "b": 0.5, "c": [64, 64], "d": True, "e": "pendulum-swingup"}
    with pytest.raises(ConfigurationError):
        parse_config_text("just words")
    with pytest.raises(ConfigurationError):
        parse_config_text(" = 3")


def test_config_to_spec(cfg):
    spec = load_config(cfg)
    assert spec.labeled.carves[0].removal_ratio == 1.0 and spec.unlabeled.fraction == 0.1
    assert spec.config().hidden == (16, 16) and spec.seeds == (0,)
    assert load_config(cfg, {"ema": 0.99}).config().ema == 0.99


def test_unknown_keys_rejected():
    for key in ("gamma", "labeled.size", "unlabeled.tier.x", "foo.n"):
        with pytest.raises(ConfigurationError):
            spec_from_mapping({key: 1})


def test_format_config_round_trips():
    spec = ExperimentSpec(seeds=(3, 4)).with_overrides(hidden=(8, 8), measure="js")
    again = spec_from_mapping(parse_config_text(format_config(spec)))
    assert again.config_hash() == spec.config_hash()


# -- exit codes ----------------------------------------------------------------


def test_exit_codes(tmp_path, cfg, capsys):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma = 0.5\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["train", "--config", str(cfg), "--set", "novalue"]) == 2
    assert main(["data", "stats", "--in", str(tmp_path / "missing.ods"), "--out", str(tmp_path)]) == 1
    assert main(["eval", "--env", "pointmass-2d"]) == 2
    assert main(["report", "--runs-dir", str(tmp_path / "empty")]) == 1


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "ludor.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "ablate" in out.stdout


# -- data ------------------------------------------------------------------------


def test_data_gen_carve_stats(tmp_path):
    raw, carved = tmp_path / "e.ods", tmp_path / "c.ods"
    assert main(["data", "gen", "--env", "pointmass-2d", "--tier", "expert", "--n", "10000", "--seed", "7", "--out", str(raw)]) == 0
    src = load_dataset(raw)
    assert len(src) == 10000
    assert main(["data", "carve", "--in", str(raw), "--out", str(carved), "--ratio", "0.6", "--dim", "0", "--mode", "densest"]) == 0
    col = src.states[:, 0]
    lo, hi = brute_force_segment(col, 50, 0.6)
    assert (lo, hi) == densest_segment(col, 50, 0.6)
    assert len(load_dataset(carved)) == carve_survivors(col, lo, hi, 0.6)
    assert main(["data", "stats", "--in", str(carved), "--out", str(tmp_path / "stats")]) == 0
    assert len(list((tmp_path / "stats").glob("*.csv"))) == 4


def test_data_transform_chain(tmp_path):
    raw = tmp_path / "m.ods"
    main(["data", "gen", "--env", "pendulum-swingup", "--tier", "medium", "--n", "2000", "--out", str(raw)])
    assert main(["data", "subsample", "--in", str(raw), "--out", str(tmp_path / "s.ods"), "--fraction", "0.25", "--seed", "1"]) == 0
    assert len(load_dataset(tmp_path / "s.ods")) == 500
    assert main(["data", "strip", "--in", str(tmp_path / "s.ods"), "--out", str(tmp_path / "u.ods")]) == 0
    assert main(["data", "filter", "--in", str(tmp_path / "u.ods"), "--out", str(tmp_path / "f.ods"), "--dim", "2", "--keep", "0.6"]) == 0
    assert 0 < len(load_dataset(tmp_path / "f.ods")) < 500
    assert main(["data", "filter", "--in", str(tmp_path / "u.ods"), "--out", str(tmp_path / "g.ods"), "--dim", "9", "--keep", "0.6"]) == 2


# -- train and eval ----------------------------------------------------------------


def test_train_twice_same_hash_and_resumes(tmp_path, cfg, capsys):
    runs = tmp_path / "runs"
    assert main(["train", "--config", str(cfg), "--runs-dir", str(runs)]) == 0
    first = capsys.readouterr().out
    assert main(["train", "--config", str(cfg), "--runs-dir", str(runs)]) == 0
    second = capsys.readouterr().out
    dirs = list(runs.iterdir())
    assert len(dirs) == 1 and first.splitlines()[0] == second.splitlines()[0]
    assert len(rows(dirs[0] / "metrics.csv")) == 31
    assert (dirs[0] / "config.txt").read_text() == format_config(load_config(cfg))


def test_runs_dir_from_environment(tmp_path, cfg, monkeypatch):
    monkeypatch.setenv("LUDOR_RUNS_DIR", str(tmp_path / "env_runs"))
    assert main(["train", "--config", str(cfg), "--set", "max_timesteps=0"]) == 0
    assert len(list((tmp_path / "env_runs").iterdir())) == 1


def test_degenerate_flags_reproduce_base_trajectory(tmp_path, cfg):
    runs = tmp_path / "runs"
    common = ["train", "--config", str(cfg), "--runs-dir", str(runs), "--algo", "td3bc"]
    assert main(common) == 0
    assert main(common + ["--ema", "1.0", "--measure", "uniform"]) == 0
    a, b = sorted(runs.iterdir())
    ra, rb = load_report(a / "report.json"), load_report(b / "report.json")
    assert ra.series == rb.series
    na, _ = load_checkpoint(a / "checkpoint" / "seed0.ckpt")
    nb, _ = load_checkpoint(b / "checkpoint" / "seed0.ckpt")
    for k in na:
        assert np.array_equal(na[k].flat, nb[k].flat)
    assert rows(a / "metrics.csv") == rows(b / "metrics.csv")


def test_eval_checkpoint_and_scripted(tmp_path, cfg, capsys):
    runs = tmp_path / "runs"
    main(["train", "--config", str(cfg), "--runs-dir", str(runs)])
    ckpt = next(runs.glob("*/checkpoint/seed0.ckpt"))
    capsys.readouterr()
    assert main(["eval", "--env", "pointmass-2d", "--checkpoint", str(ckpt), "--net", "teacher", "--episodes", "3"]) == 0
    assert "normalized" in capsys.readouterr().out
    assert main(["eval", "--env", "pointmass-2d", "--policy", "expert", "--episodes", "200", "--seed", "3"]) == 0
    score = float(capsys.readouterr().out.split("normalized")[1])
    assert abs(score - 100.0) < 5.0


# -- ablate and report ---------------------------------------------------------------


def test_ablate_ema_three_rows_per_env(tmp_path, cfg):
    out = tmp_path / "reports"
    args = ["ablate", "ema", "--config", str(cfg), "--algo", "ludor-td3bc", "--runs-dir", str(tmp_path / "runs"), "--out", str(out)]
    assert main(args + ["--set", "max_timesteps=10"]) == 0
    table = rows(out / "ablation_ema.csv")
    assert len(table) == 6
    for env in ("pointmass-2d", "pendulum-swingup"):
        assert len([r for r in table if r["env"] == env]) == 3


def test_ablate_measure_four_rows_and_resume(tmp_path, cfg, monkeypatch):
    out = tmp_path / "reports"
    args = ["ablate", "measure", "--config", str(cfg), "--env", "pointmass-2d",
            "--runs-dir", str(tmp_path / "runs"), "--out", str(out), "--set", "max_timesteps=10"]
    assert main(args + ["--jobs", "2"]) == 0
    table = rows(out / "ablation_measure.csv")
    assert [r["label"].split()[-1] for r in table] == ["kl1", "kl2", "js", "cos"]

    from ludor import harness

    def boom(*a, **k):
        raise AssertionError("recomputed a finished run")

    monkeypatch.setattr(harness, "train_seed", boom)
    assert main(args) == 0
    assert rows(out / "ablation_measure.csv") == table


def test_report_command(tmp_path, cfg, capsys):
    runs = tmp_path / "runs"
    main(["train", "--config", str(cfg), "--runs-dir", str(runs)])
    main(["train", "--config", str(cfg), "--runs-dir", str(runs), "--algo", "td3bc"])
    capsys.readouterr()
    assert main(["report", "--runs-dir", str(runs), "--out", str(tmp_path / "rep"), "--name", "all"]) == 0
    assert len(rows(tmp_path / "rep" / "all.csv")) == 2
    assert len(list((tmp_path / "rep").glob("*.svg"))) == 2
