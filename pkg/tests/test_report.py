import csv
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from ludor.harness import EvalReport, ExperimentSpec, run_experiment, summarize
from ludor.report import SUMMARY_COLUMNS, render_report, svg_plot

SPEC = ExperimentSpec(algo="ludor-td3bc", seeds=(0, 1, 2), max_timesteps=2000, eval_freq=100)


def fake_report(spec=SPEC, seed=0):
    r = np.random.default_rng(seed)
    n = spec.max_timesteps // spec.eval_freq + 1
    series = {str(s): list(r.uniform(0, 100, n)) for s in spec.seeds}
    teacher = {str(s): list(r.uniform(0, 100, n)) for s in spec.seeds}
    return summarize(spec.config_hash(), spec, series, teacher, {}, 1.5)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_one_report_gives_one_row_and_one_svg(tmp_path):
    rep = fake_report()
    path = render_report([rep], tmp_path, "general")
    assert path == tmp_path / "general.csv"
    rows = read_rows(path)
    assert len(rows) == 1 and tuple(rows[0]) == SUMMARY_COLUMNS
    assert sorted(p.name for p in tmp_path.glob("*.svg")) == [f"{rep.config_hash}.svg"]


def test_summary_recomputable_from_series_file(tmp_path):
    reports = [fake_report(SPEC, 0), fake_report(SPEC.with_overrides(ema=0.99), 1)]
    rows = read_rows(render_report(reports, tmp_path))
    for rep, row in zip(reports, rows):
        series = read_rows(tmp_path / f"{rep.config_hash}_series.csv")
        finals, teacher_finals = [], []
        for seed in {r["seed"] for r in series}:
            mine = sorted((r for r in series if r["seed"] == seed), key=lambda r: int(r["eval_index"]))
            finals.append(np.mean([float(r["score"]) for r in mine[-10:]]))
            teacher_finals.append(np.mean([float(r["teacher_score"]) for r in mine[-10:]]))
            assert [int(r["step"]) for r in mine] == [k * 100 for k in range(len(mine))]
        assert float(row["final_mean"]) == pytest.approx(np.mean(finals), abs=1e-9)
        assert float(row["final_std"]) == pytest.approx(np.std(finals), abs=1e-9)
        assert float(row["teacher_final_mean"]) == pytest.approx(np.mean(teacher_finals), abs=1e-9)


def test_svg_parses_as_xml(tmp_path):
    rep = fake_report()
    render_report([rep], tmp_path)
    root = ET.parse(tmp_path / f"{rep.config_hash}.svg").getroot()
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_svg_escapes_labels_and_handles_flat_input():
    text = svg_plot([("a < b & c", [0], [float("nan")], False)], title="<x>")
    ET.fromstring(text)


def test_partial_report_row(tmp_path):
    spec = replace(SPEC, algo="td3bc")
    rep = summarize(spec.config_hash(), spec, {"0": [1.0, 2.0]}, {}, {"1": "TrainingError: boom"}, 0.1)
    row = read_rows(render_report([rep], tmp_path))[0]
    assert row["failed_seeds"] == "1" and row["teacher_final_mean"] == "" and row["n_seeds"] == "1"
    assert rep.partial and rep.final_std == 0.0


def test_empty_input_rejected(tmp_path):
    with pytest.raises(ValueError):
        render_report([], tmp_path)


def test_run_plot_written_by_harness(tmp_path):
    spec = replace(SPEC, algo="td3bc", seeds=(0,), max_timesteps=4, eval_freq=2, n_episodes=1).with_overrides(
        hidden=(8,), batch_size=8
    )
    rep = run_experiment(spec, tmp_path)
    ET.parse(tmp_path / rep.config_hash / "plot.svg")
    assert isinstance(rep, EvalReport)
