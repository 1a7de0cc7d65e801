import csv
import json
import math

import pytest
import yaml

from truffle import bench
from truffle.bench import CSV_COLUMNS, ExperimentConfig, improvement_pct, summarize
from truffle.errors import ConfigError
from truffle.sim.cluster import Cluster, MeasurementRecord, Mode
from truffle.sim.config import SCALE_ENV, resolve_scale


def rec(mode, e2e, size=128.0, io=100.0, failed=False):
    return MeasurementRecord("t", Mode(mode), "chain", "direct", size, 0.0, end_to_end_ms=e2e,
                             io_critical_path_ms=io, failed=failed)


@pytest.mark.parametrize("baseline, truffle, expected", [
    (4353, 2697, 38.0),
    (3701, 2697, 27.1),
    (3000, 3000, 0.0),
])
def test_improvement_examples(baseline, truffle, expected):
    assert round(improvement_pct(baseline, truffle), 1) == expected
    (row,) = summarize([rec("baseline", baseline), rec("truffle", truffle)])
    assert round(row.improvement_pct, 1) == expected


def test_summary_means_stddev_and_io_ratio():
    records = [rec("baseline", 3600, io=1300), rec("baseline", 3800, io=1300),
               rec("truffle", 2400, io=20), rec("truffle", 2500, io=30)]
    (row,) = summarize(records)
    assert row.baseline_mean_ms == 3700
    assert row.baseline_stddev_ms == 100
    assert row.truffle_mean_ms == 2450
    assert row.io_ratio == pytest.approx(25 / 1300)
    assert row.comparable


def test_failed_records_ignored():
    (row,) = summarize([rec("baseline", 3700), rec("baseline", math.nan, failed=True), rec("truffle", 2400)])
    assert row.baseline_mean_ms == 3700


def test_missing_mode_is_incomparable():
    (row,) = summarize([rec("baseline", 3700)])
    assert not row.comparable
    assert math.isnan(row.improvement_pct)


def test_summarize_is_pure():
    records = [rec("baseline", 3700), rec("truffle", 2400, size=1.0), rec("truffle", 2400)]
    assert repr(summarize(records)) == repr(summarize(list(reversed(records))))


@pytest.mark.parametrize("doc", [
    {"repetitions": 0},
    {"input_sizes_mb": []},
    {"workload": "nope"},
    {"modes": ["fast"]},
    {"storage_kind": "tape"},
    {"bogus": 1},
    {"backends": {"kvs": {"base_ms": -1}}},
])
def test_config_validation(doc):
    with pytest.raises((ConfigError, ValueError)):
        ExperimentConfig.from_dict(doc)


def test_scale_precedence(monkeypatch):
    monkeypatch.delenv(SCALE_ENV, raising=False)
    assert resolve_scale(1.0) == 1.0
    monkeypatch.setenv(SCALE_ENV, "0.25")
    assert resolve_scale(1.0) == 0.25
    assert resolve_scale(1.0, 0.5) == 0.5


def write_config(tmp_path, **overrides):
    doc = {"workload": "chain", "storage_kind": "direct", "input_sizes_mb": [1, 128], "repetitions": 1,
           "scale_factor": 0.02, "output_path": str(tmp_path / "out")}
    doc.update(overrides)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_cli_run_writes_schema(tmp_path, monkeypatch):
    monkeypatch.delenv(SCALE_ENV, raising=False)
    path = write_config(tmp_path)
    assert bench.main(["run", "--config", str(path)]) == 0
    out = tmp_path / "out"
    with open(out / "results.csv") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == CSV_COLUMNS
        rows = list(reader)
    assert len(rows) == 4
    assert {r["mode"] for r in rows} == {"baseline", "truffle"}
    assert all(float(r["mean_ms"]) > 0 for r in rows)
    assert all(float(r["stddev_ms"]) == 0 for r in rows)
    assert len(json.loads((out / "results.json").read_text())) == 4
    assert len((out / "records.jsonl").read_text().splitlines()) == 4

    assert bench.main(["summarize", "--in", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert [s["size_mb"] for s in summary] == [1.0, 128.0]


def test_cli_single_mode_summary_is_partial(tmp_path):
    path = write_config(tmp_path, input_sizes_mb=[1])
    assert bench.main(["run", "--config", str(path), "--mode", "truffle", "--out", str(tmp_path / "t")]) == 0
    with open(tmp_path / "t" / "results.csv") as fh:
        assert [r["mode"] for r in csv.DictReader(fh)] == ["truffle"]
    assert bench.main(["summarize", "--in", str(tmp_path / "t")]) == 1


def test_cli_config_error_exit_2(tmp_path, capsys):
    path = write_config(tmp_path, repetitions=0)
    assert bench.main(["run", "--config", str(path)]) == 2
    assert bench.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert bench.main(["summarize", "--in", str(tmp_path / "nowhere")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_all_reps_failed_exit_1(tmp_path, monkeypatch):
    monkeypatch.setattr(Cluster, "stage_input", lambda self, *a: None)
    path = write_config(tmp_path, storage_kind="kvs", input_sizes_mb=[1], repetitions=2)
    assert bench.main(["run", "--config", str(path)]) == 1
    records = bench.read_records(tmp_path / "out")
    assert len(records) == 4 and all(r.failed for r in records)


def test_env_scale_is_applied(tmp_path, monkeypatch):
    seen = []
    original = ExperimentConfig.deploy

    def spy(self, scale):
        seen.append(scale)
        return original(self, scale)

    monkeypatch.setattr(ExperimentConfig, "deploy", spy)
    monkeypatch.setenv(SCALE_ENV, "0.01")
    path = write_config(tmp_path, input_sizes_mb=[1])
    assert bench.main(["run", "--config", str(path)]) == 0
    assert seen == [0.01]


def test_inline_cluster_config(tmp_path):
    cluster = {
        "nodes": 2,
        "topology": "chain",
        "functions": [
            {"name": "src", "downstream": ["dst"], "placement": 0},
            {"name": "dst", "cold_start_ms": 500, "compute_ms": 5, "placement": 1},
        ],
        "backends": {"direct": {"base_ms": 1, "per_mb_ms": 2}},
    }
    config = ExperimentConfig.from_dict({"cluster": cluster, "input_sizes_mb": [10], "repetitions": 1,
                                         "scale_factor": 0.2})
    assert config.profiles.link.per_mb_ms == 2
    result = bench.run(config)
    (row,) = result.summary
    assert row.comparable
    # the overridden link profile is what the model charges: 20 + 500 + (1 + 2 * 10) + 5
    assert row.baseline_predicted_ms == pytest.approx(546)
    assert row.baseline_mean_ms == pytest.approx(546, rel=0.1, abs=50)


def test_parallel_warns(tmp_path):
    config = ExperimentConfig(input_sizes_mb=[0, 1], repetitions=1, scale_factor=0.01)
    with pytest.warns(UserWarning, match="timing"):
        result = bench.run(config, parallel=True)
    assert len(result.records) == 4
