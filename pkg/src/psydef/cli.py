"""Command-line entry point: ``psydef run`` for the whole pipeline plus one command per stage.

Exit codes: 0 success, 1 validation failure, 2 backend exhaustion, 3 QC rejection halt.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backends import BackendExhaustedError
from .catalog import CatalogError, load_dmrs_catalog, load_supplementary_definitions
from .config import ConfigError, PipelineConfig
from .corpus import CorpusError, load_corpus, save_corpus
from .evaluation import cdi_curve, default_cdi_components, emit_analysis, emit_report, evaluate, sink_analysis
from .features import FeatureRow
from .fixtures import FIXTURE_CONFIG, make_fixture_corpus
from .fusion import CheckpointError, TrainingError, load_checkpoint, predict, save_checkpoint, train
from .jsonl import read_jsonl, write_jsonl
from .pipeline import (
    STAGES, PipelineError, QcHalt, build_rows, identify_all_stressors, run_augmentation, run_pipeline, run_qc,
    stressor_index,
)
from .augmentor import SyntheticSample
from .quality import write_qc_report
from .stressor import StressorRecord

EXIT_OK, EXIT_INVALID, EXIT_BACKEND, EXIT_QC_HALT = 0, 1, 2, 3

logger = logging.getLogger("psydef")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "backend", None):
        cfg.backends.kind = args.backend
    if getattr(args, "strategy", None):
        cfg.augmentation.strategy = args.strategy
        cfg.augmentation.parsed()  # validate
    if getattr(args, "cap_basis", None):
        cfg.augmentation.cap_basis = args.cap_basis
    if getattr(args, "kappa_threshold", None) is not None:
        if not -1.0 <= args.kappa_threshold <= 1.0:
            raise ConfigError(f"kappa threshold must lie in [-1, 1], got {args.kappa_threshold}")
        cfg.qc.kappa_threshold = args.kappa_threshold
    if getattr(args, "on_rejection", None):
        cfg.qc.on_rejection = args.on_rejection
    if getattr(args, "catalog", None):
        cfg.paths.catalog = str(Path(args.catalog).resolve())
    if getattr(args, "supplementary", None):
        cfg.paths.supplementary = str(Path(args.supplementary).resolve())
    if getattr(args, "max_epochs", None):
        cfg.fusion.max_epochs = args.max_epochs
    return cfg


def _catalog(cfg: PipelineConfig):
    return load_dmrs_catalog(cfg.resolve(cfg.paths.catalog))


def _supplementary(cfg: PipelineConfig):
    return load_supplementary_definitions(cfg.resolve(cfg.paths.supplementary))


def _stressors(path: Optional[str]):
    return stressor_index(read_jsonl(path, StressorRecord.from_dict)) if path else {}


def _rows(path: str) -> list[FeatureRow]:
    return read_jsonl(path, FeatureRow.from_dict)


# ---------------------------------------------------------------------------
# commands

def cmd_run(args) -> int:
    cfg = _config(args)
    if args.out:
        cfg.paths.output_root = str(Path(args.out).resolve())
    status = run_pipeline(cfg, args.stages, force=args.force)
    for stage, state in status.items():
        print(f"{stage:<9} {state}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(make_fixture_corpus(args.dialogues, args.seed), out / "corpus.jsonl")
    cfg_path = out / "pipeline.yaml"
    cfg_path.write_text(FIXTURE_CONFIG)
    print(f"wrote {out / 'corpus.jsonl'} and {cfg_path}")
    return EXIT_OK


def cmd_stressor(args) -> int:
    cfg = _config(args)
    records = identify_all_stressors(load_corpus(args.input), cfg.backends.build_llm(),
                                     max(1, cfg.augmentation.workers))
    write_jsonl(args.out, records)
    print(f"{len(records)} stressor records -> {args.out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _config(args)
    res = run_augmentation(load_corpus(args.input), _stressors(args.stressors), _catalog(cfg), _supplementary(cfg),
                           cfg.backends.build_llm(), cfg.augmentation)
    write_jsonl(args.out, res.samples)
    Path(args.out).with_suffix(".report.json").write_text(json.dumps(res.report, indent=2, sort_keys=True) + "\n")
    print(f"{len(res.samples)} synthetic samples ({res.report['strategy']}) -> {args.out}")
    return EXIT_OK


def cmd_qc(args) -> int:
    cfg = _config(args)
    samples = read_jsonl(args.input, SyntheticSample.from_dict)
    res = run_qc(samples, load_corpus(args.corpus), _catalog(cfg), _supplementary(cfg), cfg.backends.build_nli(),
                 cfg.qc, seed=cfg.backends.seed)
    out = Path(args.out)
    write_jsonl(out / "accepted.jsonl", res.accepted)
    paths = write_qc_report(out, res.class_rows, res.verdicts, {"accounting": res.accounting})
    print(paths["summary"].read_text(), end="")
    if res.any_rejected and cfg.qc.on_rejection == "halt":
        raise QcHalt("one or more QC batches failed the kappa gate")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _config(args)
    synthetic = read_jsonl(args.synthetic, SyntheticSample.from_dict) if args.synthetic else []
    rows = build_rows(load_corpus(args.input), _stressors(args.stressors), cfg.backends.build(), _catalog(cfg),
                      cfg.features, synthetic)
    write_jsonl(args.out, rows)
    print(f"{len(rows)} feature rows -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    encoder = cfg.backends.build_encoder()
    model, hist = train(_rows(args.train), _rows(args.dev), cfg.fusion, encoder)
    save_checkpoint(model, args.out, encoder, history=hist, catalog_fingerprint=_catalog(cfg).fingerprint)
    print(f"best epoch {hist.best_epoch}/{hist.epochs} dev macro-F1 {hist.dev_macro_f1[hist.best_epoch - 1]:.4f} "
          f"-> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    model, encoder, _ = load_checkpoint(args.ckpt, catalog_fingerprint=_catalog(cfg).fingerprint)
    rows = _rows(args.rows)
    labels, dists = predict(model, rows, encoder)
    write_jsonl(args.out, ({"id": r.id, "label": int(y), "probs": [round(float(p), 8) for p in d]}
                           for r, y, d in zip(rows, labels, dists)))
    print(f"{len(rows)} predictions -> {args.out}")
    return EXIT_OK


def _labels_by_id(path: str) -> dict[str, int]:
    return {r["id"]: int(r["label"]) for r in read_jsonl(path)}


def cmd_eval(args) -> int:
    preds, gold = _labels_by_id(args.preds), _labels_by_id(args.gold)
    missing = sorted(set(gold) - set(preds))
    if missing:
        raise ValueError(f"{len(missing)} gold ids have no prediction (first: {missing[0]!r})")
    ids = sorted(gold)
    report = evaluate([preds[i] for i in ids], [gold[i] for i in ids])
    emit_report(report, args.out, sink=sink_analysis(report.confusion, args.sink_label))
    print(f"accuracy {report.accuracy:.4f} macro-F1 {report.macro_f1:.4f} -> {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    dialogues = load_corpus(args.input)
    components = default_cdi_components(cfg.backends.build_emotion())
    cdi = {d.id: cdi_curve(d, components) for d in dialogues if len(d.seeker_turns()) >= 2}
    rows = _rows(args.rows) if args.rows else None
    names = [m.name for m in _catalog(cfg).mechanisms] if rows is not None else None
    files = emit_analysis(dialogues, args.out, cdi=cdi, threshold_z=cfg.analysis.cdi_threshold_z,
                          feature_rows=rows, mechanism_names=names)
    print(f"{len(files)} analysis files -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psydef", description="Defense-mechanism classification pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="pipeline config (YAML or JSON)")
        sp.add_argument("--backend", choices=("stub", "http"), help="override backends.kind")
        return sp

    sp = common(sub.add_parser("run", help="run pipeline stages with manifests"), config_required=True)
    sp.add_argument("--stages", default="all", help=f"'all' or a comma list of: {','.join(STAGES)}")
    sp.add_argument("--out", help="override paths.output_root")
    sp.add_argument("--force", action="store_true", help="ignore manifests and re-run every requested stage")
    sp.add_argument("--strategy", help="augmentation strategy, e.g. x8 or cap:500")
    sp.add_argument("--cap-basis", choices=("total", "synthetic"))
    sp.add_argument("--kappa-threshold", type=float)
    sp.add_argument("--on-rejection", choices=("continue", "halt"))
    sp.add_argument("--catalog")
    sp.add_argument("--max-epochs", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("fixture", help="write a synthetic demo corpus and a stub-backend config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dialogues", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_fixture)

    sp = common(sub.add_parser("stressor", help="identify the stressor behind every seeker turn"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_stressor)

    sp = common(sub.add_parser("augment", help="generate stressor-anchored synthetic samples"))
    sp.add_argument("--in", dest="input", required=True, help="training corpus")
    sp.add_argument("--stressors", required=True)
    sp.add_argument("--strategy")
    sp.add_argument("--cap-basis", choices=("total", "synthetic"))
    sp.add_argument("--catalog")
    sp.add_argument("--supplementary")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = common(sub.add_parser("qc", help="gate synthetic batches and write the QC report"))
    sp.add_argument("--in", dest="input", required=True, help="synthetic samples")
    sp.add_argument("--corpus", required=True, help="real training corpus for the annotator")
    sp.add_argument("--kappa-threshold", type=float)
    sp.add_argument("--on-rejection", choices=("continue", "halt"))
    sp.add_argument("--catalog")
    sp.add_argument("--supplementary")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_qc)

    sp = common(sub.add_parser("features", help="build heuristic + defense-profile feature rows"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--stressors")
    sp.add_argument("--synthetic")
    sp.add_argument("--catalog")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_features)

    sp = common(sub.add_parser("train", help="train the fusion classifier"))
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--catalog")
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("predict", help="predict labels for feature rows"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--rows", required=True)
    sp.add_argument("--catalog")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="metrics report from predictions and gold labels")
    sp.add_argument("--preds", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--sink-label", type=int, default=7)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("analyze", help="corpus analytics plot data"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--rows", help="feature rows, for mechanism activation tables")
    sp.add_argument("--catalog")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QcHalt as exc:
        print(f"QC halt: {exc}", file=sys.stderr)
        return EXIT_QC_HALT
    except BackendExhaustedError as exc:
        print(f"backend exhausted: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (PipelineError, ConfigError, CorpusError, CatalogError, CheckpointError, TrainingError,
            FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
