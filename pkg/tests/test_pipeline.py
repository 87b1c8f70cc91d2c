import json
import shutil
import time
from importlib import resources
from pathlib import Path

import pytest

from psydef.catalog import load_dmrs_catalog
from psydef.cli import main
from psydef.config import PipelineConfig
from psydef.pipeline import STAGES, MissingArtifactError, manifest_mismatch, run_pipeline

PLOT_FILES = ("class_distribution.csv", "trajectory.csv", "magnitude_speed.csv", "transitions.csv", "cdi.csv",
              "opening_up.csv", "latency_summary.csv", "turns_per_dialogue.csv", "tokens_per_dialogue.csv",
              "mechanism_activations.csv", "analysis.json")


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    """Fixture corpus run through every stage once; tests copy it before mutating."""
    root = tmp_path_factory.mktemp("fx")
    assert main(["fixture", "--out", str(root)]) == 0
    t0 = time.perf_counter()
    status = run_pipeline(PipelineConfig.load(root / "pipeline.yaml"))
    return root, status, time.perf_counter() - t0


def copy_run(fixture_run, tmp_path) -> Path:
    dst = tmp_path / "fx"
    shutil.copytree(fixture_run[0], dst)
    return dst


def test_smoke_run_produces_all_artifacts(fixture_run):
    root, status, elapsed = fixture_run
    assert status == dict.fromkeys(STAGES, "ran")
    assert elapsed < 60
    run = root / "run"
    for stage in STAGES:
        assert (run / stage / "manifest.json").is_file()
    header = (run / "qc" / "qc_report.csv").read_text().splitlines()[0]
    assert header == "class,label,N,SB,SA"
    metrics = json.loads((run / "eval" / "report" / "metrics.json").read_text())
    assert {"accuracy", "macro_f1", "per_class", "confusion", "sink"} <= set(metrics)
    for name in PLOT_FILES:
        assert (run / "analyze" / "figs" / name).is_file(), name


def test_rerun_is_a_noop(fixture_run, tmp_path):
    root = copy_run(fixture_run, tmp_path)
    before = {p: p.stat().st_mtime_ns for p in (root / "run").rglob("*") if p.is_file()}
    status = run_pipeline(PipelineConfig.load(root / "pipeline.yaml"))
    assert set(status.values()) == {"skipped"}
    after = {p: p.stat().st_mtime_ns for p in (root / "run").rglob("*") if p.is_file()}
    assert before == after


def test_indicator_edit_reruns_only_downstream_of_features(fixture_run, tmp_path):
    root = copy_run(fixture_run, tmp_path)
    cat = json.loads(resources.files("psydef.data").joinpath("dmrs_mini.json").read_text("utf-8"))
    cat["indicators"][0]["statement"] += " (revised wording)"
    (root / "catalog.json").write_text(json.dumps(cat))
    cfg = PipelineConfig.load(root / "pipeline.yaml")
    cfg.paths.catalog = "catalog.json"
    assert load_dmrs_catalog(root / "catalog.json").fingerprint != load_dmrs_catalog().fingerprint
    status = run_pipeline(cfg)
    assert status == {"ingest": "skipped", "stressor": "skipped", "augment": "skipped", "qc": "skipped",
                      "features": "ran", "train": "ran", "eval": "ran", "analyze": "ran"}


def test_config_change_reruns_train_and_eval(fixture_run, tmp_path):
    root = copy_run(fixture_run, tmp_path)
    cfg = PipelineConfig.load(root / "pipeline.yaml")
    cfg.fusion.max_epochs = 2
    status = run_pipeline(cfg, "features,train")
    assert status == {"features": "skipped", "train": "ran"}
    stage = root / "run" / "train"
    m = json.loads((stage / "manifest.json").read_text())
    assert m["config"]["fusion"]["max_epochs"] == 2
    other = {**m["config"], "fusion": {**m["config"]["fusion"], "max_epochs": 3}}
    assert manifest_mismatch(stage, m["inputs"], other) == "config changed: fusion"
    assert manifest_mismatch(stage, {**m["inputs"], "extra": "x"}, m["config"]) == "input changed: extra"


def test_tampered_output_triggers_rerun(fixture_run, tmp_path):
    root = copy_run(fixture_run, tmp_path)
    p = root / "run" / "eval" / "preds.jsonl"
    p.write_text(p.read_text() + "\n")
    cfg = PipelineConfig.load(root / "pipeline.yaml")
    assert run_pipeline(cfg, "eval") == {"eval": "ran"}
    (root / "run" / "eval" / "gold.jsonl").unlink()
    stage = root / "run" / "eval"
    m = json.loads((stage / "manifest.json").read_text())
    assert manifest_mismatch(stage, m["inputs"], m["config"]) == "output missing: gold.jsonl"


def test_missing_upstream_artifact(tmp_path):
    assert main(["fixture", "--out", str(tmp_path)]) == 0
    cfg = PipelineConfig.load(tmp_path / "pipeline.yaml")
    with pytest.raises(MissingArtifactError, match="run stage 'features' first"):
        run_pipeline(cfg, "train")
    assert main(["run", "--config", str(tmp_path / "pipeline.yaml"), "--stages", "train"]) == 1


def test_unknown_stage_is_exit_1(tmp_path):
    main(["fixture", "--out", str(tmp_path)])
    assert main(["run", "--config", str(tmp_path / "pipeline.yaml"), "--stages", "bogus"]) == 1


def test_qc_halt_exit_3_writes_report_but_no_manifest(fixture_run, tmp_path, capsys):
    root = copy_run(fixture_run, tmp_path)
    code = main(["run", "--config", str(root / "pipeline.yaml"), "--stages", "qc",
                 "--kappa-threshold", "1.0", "--on-rejection", "halt"])
    assert code == 3
    qc = root / "run" / "qc"
    assert (qc / "qc_report.csv").is_file() and (qc / "qc_batches.csv").is_file()
    assert not (qc / "manifest.json").exists()
    assert "QC halt" in capsys.readouterr().err


def test_backend_exhaustion_is_exit_2(tmp_path):
    main(["fixture", "--out", str(tmp_path), "--dialogues", "4"])
    cfg = tmp_path / "pipeline.yaml"
    cfg.write_text(cfg.read_text().replace(
        "backends:\n  kind: stub\n",
        "backends:\n  kind: http\n  retry_attempts: 1\n  timeout_s: 2\n"
        "  llm: {endpoint: 'http://127.0.0.1:9', model: m}\n"
        "  nli: {endpoint: 'http://127.0.0.1:9', model: m}\n"
        "  emotion: {endpoint: 'http://127.0.0.1:9', model: m}\n"))
    assert main(["run", "--config", str(cfg), "--stages", "ingest,stressor"]) == 2


def test_invalid_config_is_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("qc:\n  kappa_threshold: 2\n")
    assert main(["run", "--config", str(p)]) == 1
    assert "[-1, 1]" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 1


def test_per_stage_commands_chain(fixture_run, tmp_path):
    root = copy_run(fixture_run, tmp_path)
    run, w = root / "run", tmp_path / "work"
    w.mkdir()
    train, dev = str(run / "ingest" / "train.jsonl"), str(run / "ingest" / "dev.jsonl")
    assert main(["stressor", "--in", train, "--out", str(w / "s.jsonl")]) == 0
    assert main(["augment", "--in", train, "--stressors", str(w / "s.jsonl"), "--strategy", "x2",
                 "--out", str(w / "syn.jsonl")]) == 0
    report = json.loads((w / "syn.report.json").read_text())
    assert report["strategy"]
    assert main(["qc", "--in", str(w / "syn.jsonl"), "--corpus", train, "--out", str(w / "qc")]) == 0
    assert (w / "qc" / "qc_report.csv").is_file()
    assert main(["features", "--in", train, "--stressors", str(w / "s.jsonl"),
                 "--synthetic", str(w / "qc" / "accepted.jsonl"), "--out", str(w / "tr.jsonl")]) == 0
    assert main(["features", "--in", dev, "--out", str(w / "dv.jsonl")]) == 0
    assert main(["train", "--train", str(w / "tr.jsonl"), "--dev", str(w / "dv.jsonl"), "--max-epochs", "2",
                 "--out", str(w / "ckpt")]) == 0
    assert main(["predict", "--ckpt", str(w / "ckpt"), "--rows", str(w / "dv.jsonl"),
                 "--out", str(w / "p.jsonl")]) == 0
    assert main(["eval", "--preds", str(w / "p.jsonl"), "--gold", str(w / "dv.jsonl"),
                 "--out", str(w / "rep")]) == 0
    assert (w / "rep" / "metrics.json").is_file()
    assert main(["analyze", "--in", dev, "--rows", str(w / "dv.jsonl"), "--out", str(w / "figs")]) == 0
    assert (w / "figs" / "mechanism_activations.csv").is_file()


def test_eval_reports_missing_predictions(tmp_path):
    (tmp_path / "p.jsonl").write_text(json.dumps({"id": "a", "label": 1}) + "\n")
    (tmp_path / "g.jsonl").write_text(json.dumps({"id": "a", "label": 1}) + "\n"
                                      + json.dumps({"id": "b", "label": 2}) + "\n")
    assert main(["eval", "--preds", str(tmp_path / "p.jsonl"), "--gold", str(tmp_path / "g.jsonl"),
                 "--out", str(tmp_path / "r")]) == 1
