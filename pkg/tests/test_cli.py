"""Configuration handling, exit codes, and end-to-end pipeline runs."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from gcls.cli import main
from gcls.config import PipelineConfig, config_from_dict, load_config
from gcls.errors import ConfigError


SMALL = {
    "synth": {"kernels_per_class": 3},
    "train": {"epochs": 2, "patience": 20},
}


def write_config(tmp_path, out_dir, extra=None) -> str:
    raw = {"seed": 0, "out_dir": str(out_dir), **SMALL}
    if extra:
        raw.update(extra)
    path = os.path.join(tmp_path, "config.json")
    with open(path, "w") as fh:
        json.dump(raw, fh)
    return path


# ---------------------------------------------------------------------------
# config


def test_default_config_valid():
    cfg = PipelineConfig()
    cfg.validate()
    assert cfg.seed == 0
    assert cfg.train.seed == 0
    assert cfg.synth.kernels_per_class == 50


def test_config_hash_ignores_paths():
    a = config_from_dict({"seed": 1, "out_dir": "x"})
    b = config_from_dict({"seed": 1, "out_dir": "y", "corpus_dir": "z"})
    c = config_from_dict({"seed": 2, "out_dir": "x"})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_config_seed_propagates_to_training():
    cfg = config_from_dict({"seed": 7})
    assert cfg.train.seed == 7


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 0, "not_a_key": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"bogus": 2}})


def test_load_config_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_config_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 5, "train": {"epochs": 9}, "evaluate": {"figures": False}})
    path = str(tmp_path / "c.json")
    cfg.save(path)
    back = load_config(path)
    assert back.seed == 5
    assert back.train.epochs == 9
    assert back.evaluate.figures is False
    assert back.config_hash() == cfg.config_hash()


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = os.path.join(tmp_path, "config.json")
    with open(path, "w") as fh:
        json.dump({"seed": 0, "bogus": True}, fh)
    code = main(["synth", "--config", path, "--out", str(tmp_path / "out")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_missing_corpus_exits_3(tmp_path, capsys):
    code = main(["build-graphs", "--out", str(tmp_path / "out")])
    assert code == 3
    err = capsys.readouterr().err
    assert "data error" in err
    assert "build-graphs" in err


def test_bad_log_level_exits_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GCLS_LOG", "verbose")
    code = main(["synth", "--out", str(tmp_path / "out")])
    assert code == 2


def test_negative_workers_exits_2(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "out"), "--workers", "0"])
    assert code == 2


# ---------------------------------------------------------------------------
# pipeline runs


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    out = tmp / "out"
    config = write_config(tmp, out)
    code = main(["pipeline", "--config", config])
    assert code == 0
    return tmp, out, config


def test_pipeline_produces_artifacts(pipeline_run):
    _, out, _ = pipeline_run
    for name in (
        "corpus/manifest.json",
        "corpus/metrics.json",
        "graphs/registry.json",
        "checkpoint.json",
        "checkpoint.json.bin",
        "trainlog.jsonl",
        "embeddings.jsonl",
        "plan.json",
        "silhouette.json",
        "report.json",
        "report.csv",
        "figures/error_bars.png",
        "figures/embedding_scatter.png",
    ):
        assert (out / name).exists(), name


def test_report_csv_and_json_agree(pipeline_run):
    _, out, _ = pipeline_run
    report = json.loads((out / "report.json").read_text())
    lines = (out / "report.csv").read_text().strip().splitlines()
    assert lines[0] == "metric,full,sampled,error_pct"
    rows = dict(line.split(",", 1) for line in lines[1:])
    assert "cycles" in rows
    assert "speedup" in rows
    cycles = rows["cycles"].split(",")
    assert float(cycles[2]) == pytest.approx(report["metrics"]["cycles"]["error_pct"])
    assert float(rows["speedup"].split(",")[2]) == pytest.approx(report["speedup"])


def test_plan_and_report_carry_provenance(pipeline_run):
    _, out, config = pipeline_run
    cfg = load_config(config)
    plan = json.loads((out / "plan.json").read_text())
    report = json.loads((out / "report.json").read_text())
    for raw in (plan, report):
        assert raw["provenance"]["config_hash"] == cfg.config_hash()
        assert raw["provenance"]["seed"] == 0


def test_rerun_skips_completed_stages(pipeline_run, caplog):
    _, out, config = pipeline_run
    stamp = (out / "checkpoint.json").stat().st_mtime_ns
    code = main(["pipeline", "--config", config])
    assert code == 0
    assert (out / "checkpoint.json").stat().st_mtime_ns == stamp  # untouched


def test_force_recomputes(pipeline_run):
    _, out, config = pipeline_run
    stamp = (out / "plan.json").stat().st_mtime_ns
    code = main(["cluster", "--config", config, "--force"])
    assert code == 0
    assert (out / "plan.json").stat().st_mtime_ns != stamp


def test_stage_refuses_mismatched_upstream(pipeline_run, tmp_path, capsys):
    tmp, out, config = pipeline_run
    # same artifacts, different seed: downstream must refuse (only
    # --force overrides the provenance check)
    code = main(["cluster", "--config", str(config), "--seed", "99"])
    assert code == 2
    assert "different config or seed" in capsys.readouterr().err


def test_embeddings_file_shape(pipeline_run):
    _, out, _ = pipeline_run
    rows = [json.loads(l) for l in (out / "embeddings.jsonl").read_text().splitlines()]
    assert len(rows) == 12
    ids = [r["launch_id"] for r in rows]
    assert ids == sorted(ids)
    for r in rows:
        z = np.asarray(r["z"])
        assert z.shape == (256,)
        assert np.all(np.isfinite(z))
