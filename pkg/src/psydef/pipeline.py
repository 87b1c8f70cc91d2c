"""Resumable stage orchestration: ingest -> stressor -> augment -> qc -> features -> train -> eval -> analyze.

Every stage writes into its own directory under the output root and finishes by
writing ``manifest.json``: the content hashes of everything it read, a snapshot
of the config sections it depends on, and the hashes of everything it wrote. A
stage whose manifest still matches is skipped; otherwise the log says which
input changed and the stage directory is rebuilt from scratch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .augmentor import (
    GenerationShortfall, GenerationStats, SyntheticSample, generate_class_batch, plan_augmentation,
    seed_instances,
)
from .backends import GenerationParams
from .catalog import (
    DefenseDefinition, DmrsCatalog, definitions_for_label, load_dmrs_catalog, load_supplementary_definitions,
)
from .config import PipelineConfig
from .corpus import LABEL_NAMES, Dialogue, class_distribution, load_corpus, save_corpus, split_corpus
from .evaluation import cdi_curve, default_cdi_components, emit_analysis, emit_report, evaluate, sink_analysis
from .features import DmrsLevelAnnotator, FeatureRow, HeuristicConfig, build_feature_row
from .fusion import load_checkpoint, predict, save_checkpoint, train
from .jsonl import read_jsonl, write_jsonl
from .quality import QcVerdict, TfidfAnnotator, kappa_gate, make_batches, qc_class_rows, write_qc_report
from .stressor import FALLBACK_CATEGORY, StressorRecord, identify_stressor

logger = logging.getLogger(__name__)

STAGES = ("ingest", "stressor", "augment", "qc", "features", "train", "eval", "analyze")
MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    exit_code = 1


class MissingArtifactError(PipelineError):
    pass


class QcHalt(PipelineError):
    """Raised after the QC stage has written its report, when a batch failed and on_rejection=halt."""

    exit_code = 3


# ---------------------------------------------------------------------------
# hashing

def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return sha256_bytes(json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode())


# ---------------------------------------------------------------------------
# core stage logic (also used directly by the per-stage CLI commands)

def identify_all_stressors(dialogues: Sequence[Dialogue], llm, workers: int = 1) -> list[StressorRecord]:
    jobs = [(d, t.index) for d in dialogues for t in d.seeker_turns()]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda j: identify_stressor(j[0], j[1], llm), jobs))
    return [identify_stressor(d, i, llm) for d, i in jobs]


def stressor_index(records: Iterable[StressorRecord]) -> dict[tuple[str, int], StressorRecord]:
    return {(r.dialogue_id, r.turn_index): r for r in records}


@dataclass
class AugmentationResult:
    samples: list[SyntheticSample]
    report: dict


def run_augmentation(train_dialogues: Sequence[Dialogue], stressors: dict[tuple[str, int], StressorRecord],
                     catalog: DmrsCatalog, supplementary: dict[int, DefenseDefinition], llm,
                     aug_cfg) -> AugmentationResult:
    """Generate synthetic samples for every minority class; shortfalls are logged, not fatal."""
    counts = class_distribution(train_dialogues)
    plan = plan_augmentation(counts, aug_cfg.parsed())
    seeds = seed_instances(train_dialogues, stressors)
    stats = GenerationStats()
    samples: list[SyntheticSample] = []
    shortfalls = {}
    for label in sorted(plan.per_class_synthetic_target):
        target = plan.per_class_synthetic_target[label]
        if target == 0:
            continue
        # disjoint generator-seed ranges per class keep classes independent of each other
        params = GenerationParams(aug_cfg.max_tokens, aug_cfg.temperature, aug_cfg.seed + 1_000_000 * label)
        try:
            got = generate_class_batch(label, target, seeds, catalog, supplementary, llm, params,
                                       budget_factor=aug_cfg.budget_factor, round_size=aug_cfg.round_size,
                                       max_workers=aug_cfg.workers, stats=stats)
        except GenerationShortfall as exc:
            logger.warning("generation shortfall for label %d: %d of %d after %d calls",
                           label, len(exc.samples), target, exc.calls)
            got = exc.samples
            shortfalls[label] = {"target": target, "produced": len(got)}
        samples.extend(got)
    report = {
        "strategy": str(aug_cfg.parsed()),
        "original_counts": {str(k): v for k, v in counts.items()},
        "plan": {str(k): v for k, v in plan.per_class_synthetic_target.items()},
        "produced": {str(k): sum(s.intended_label == k for s in samples) for k in plan.per_class_synthetic_target},
        "shortfalls": {str(k): v for k, v in shortfalls.items()},
        "calls": stats.calls,
        "parse_failures": stats.parse_failures,
    }
    return AugmentationResult(samples, report)


def label_definitions(labels: Iterable[int], catalog: DmrsCatalog,
                      supplementary: dict[int, DefenseDefinition]) -> dict[str, DefenseDefinition]:
    out = {}
    for label in sorted(set(labels)):
        for d in definitions_for_label(label, catalog, supplementary):
            out[d.mechanism_name] = d
    return out


@dataclass
class QcResult:
    accepted: list[SyntheticSample]
    verdicts: list[QcVerdict]
    class_rows: list[dict]
    accounting: dict = field(default_factory=dict)

    @property
    def any_rejected(self) -> bool:
        return any(not v.accepted for v in self.verdicts)


def run_qc(samples: Sequence[SyntheticSample], train_dialogues: Sequence[Dialogue], catalog: DmrsCatalog,
           supplementary: dict[int, DefenseDefinition], nli, qc_cfg, seed: int = 0) -> QcResult:
    if qc_cfg.annotator == "tfidf":
        turns = [t for d in train_dialogues for t in d.labeled_turns()]
        annotator = TfidfAnnotator([t.text for t in turns], [t.label for t in turns], seed=seed)
    else:
        annotator = DmrsLevelAnnotator(catalog, nli)
    definitions = label_definitions((s.intended_label for s in samples), catalog, supplementary)
    accepted, verdicts = [], []
    for batch in make_batches(samples, qc_cfg.min_batch):
        verdict, kept = kappa_gate(batch, annotator, qc_cfg.kappa_threshold, nli_gateway=nli,
                                   definitions=definitions, template=qc_cfg.hypothesis_template)
        verdicts.append(verdict)
        accepted.extend(kept)
        logger.info("qc batch round=%s n=%d kappa=%s -> %s", verdict.round, verdict.n,
                    None if verdict.kappa is None else round(verdict.kappa, 4),
                    "accepted" if verdict.accepted else verdict.status if verdict.status != "evaluated" else "rejected")
    rows = qc_class_rows(accepted, samples, definitions, nli, LABEL_NAMES, qc_cfg.hypothesis_template)
    accounting = {}
    for label in sorted({s.intended_label for s in samples}):
        gen = [s for s in samples if s.intended_label == label]
        acc = sum(s.intended_label == label for s in accepted)
        unev = sum(1 for s in gen if s.qc and s.qc.get("status") == "unevaluable")
        accounting[str(label)] = {"generated": len(gen), "accepted": acc, "rejected": len(gen) - acc - unev,
                                  "unevaluable": unev}
    return QcResult(accepted, verdicts, rows, accounting)


def build_rows(dialogues: Sequence[Dialogue], stressors: dict[tuple[str, int], StressorRecord], backends,
               catalog: DmrsCatalog, heur_cfg: HeuristicConfig = HeuristicConfig(),
               synthetic: Sequence[SyntheticSample] = ()) -> list[FeatureRow]:
    """Feature rows for every labeled seeker turn, then for each synthetic sample."""
    rows = []
    for d in dialogues:
        for t in d.labeled_turns():
            rec = stressors.get((d.id, t.index)) or StressorRecord(FALLBACK_CATEGORY, "", d.id, t.index)
            rows.append(build_feature_row(t.text, rec, backends, catalog, label=t.label,
                                          row_id=f"{d.id}:{t.index}", source="real", config=heur_cfg))
    for s in synthetic:
        rows.append(build_feature_row(s.text, s.stressor, backends, catalog, label=s.intended_label,
                                      row_id=s.id, source="synthetic", config=heur_cfg))
    return rows


# ---------------------------------------------------------------------------
# context + stages

class Context:
    """Lazily built shared resources for one pipeline invocation."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = config.output_root
        self._backends = {}
        self._catalog = None
        self._supplementary = None

    def dir(self, stage: str) -> Path:
        return self.root / stage

    def artifact(self, stage: str, name: str) -> Path:
        p = self.dir(stage) / name
        if not p.is_file():
            raise MissingArtifactError(f"missing upstream artifact {p} (run stage {stage!r} first)")
        return p

    def backend(self, kind: str):
        if kind not in self._backends:
            b = self.config.backends
            self._backends[kind] = {"llm": b.build_llm, "nli": b.build_nli, "emotion": b.build_emotion,
                                    "encoder": b.build_encoder}[kind]()
        return self._backends[kind]

    @property
    def backends(self):
        from .backends import Backends
        return Backends(self.backend("llm"), self.backend("nli"), self.backend("emotion"), None)

    @property
    def catalog(self) -> DmrsCatalog:
        if self._catalog is None:
            self._catalog = load_dmrs_catalog(self.config.resolve(self.config.paths.catalog))
        return self._catalog

    @property
    def supplementary(self) -> dict[int, DefenseDefinition]:
        if self._supplementary is None:
            self._supplementary = load_supplementary_definitions(
                self.config.resolve(self.config.paths.supplementary))
        return self._supplementary

    def supplementary_hash(self) -> str:
        p = self.config.resolve(self.config.paths.supplementary)
        if p is None:
            data = resources.files("psydef.data").joinpath("supplementary_definitions.json").read_bytes()
            return sha256_bytes(data)
        return sha256_file(p)

    def load_split(self) -> tuple[list[Dialogue], list[Dialogue]]:
        return (load_corpus(self.artifact("ingest", "train.jsonl")),
                load_corpus(self.artifact("ingest", "dev.jsonl")))

    def load_stressors(self) -> dict[tuple[str, int], StressorRecord]:
        return stressor_index(read_jsonl(self.artifact("stressor", "stressors.jsonl"), StressorRecord.from_dict))


@dataclass
class Stage:
    name: str
    inputs: Callable[[Context], dict[str, str]]
    config_sections: tuple[str, ...]
    run: Callable[[Context, Path], None]


def _upstream(ctx: Context, *refs: tuple[str, str]) -> dict[str, str]:
    return {f"{s}/{n}": sha256_file(ctx.artifact(s, n)) for s, n in refs}


def _ingest_inputs(ctx):
    c = ctx.config
    out = {"corpus": sha256_file(c.resolve(c.paths.corpus))}
    if c.paths.dev_corpus:
        out["dev_corpus"] = sha256_file(c.resolve(c.paths.dev_corpus))
    return out


def _ingest(ctx, out):
    c = ctx.config
    dialogues = load_corpus(c.resolve(c.paths.corpus))
    if c.paths.dev_corpus:
        train_d, dev_d = dialogues, load_corpus(c.resolve(c.paths.dev_corpus))
    else:
        train_d, dev_d = split_corpus(dialogues, (c.split.train, c.split.dev), c.split.seed)
    save_corpus(train_d, out / "train.jsonl")
    save_corpus(dev_d, out / "dev.jsonl")
    doc = {"train": class_distribution(train_d), "dev": class_distribution(dev_d),
           "n_train_dialogues": len(train_d), "n_dev_dialogues": len(dev_d)}
    (out / "class_distribution.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _stressor(ctx, out):
    train_d, dev_d = ctx.load_split()
    workers = max(1, ctx.config.augmentation.workers)
    write_jsonl(out / "stressors.jsonl", identify_all_stressors(train_d + dev_d, ctx.backend("llm"), workers))


def _augment_inputs(ctx):
    d = _upstream(ctx, ("ingest", "train.jsonl"), ("stressor", "stressors.jsonl"))
    # only what prompts are rendered from: editing an indicator must not re-run generation
    d["catalog_generation_view"] = sha256_json(ctx.catalog.generation_view())
    d["supplementary"] = ctx.supplementary_hash()
    return d


def _augment(ctx, out):
    train_d, _ = ctx.load_split()
    res = run_augmentation(train_d, ctx.load_stressors(), ctx.catalog, ctx.supplementary, ctx.backend("llm"),
                           ctx.config.augmentation)
    write_jsonl(out / "synthetic.jsonl", res.samples)
    (out / "augmentation.json").write_text(json.dumps(res.report, indent=2, sort_keys=True) + "\n")


def _qc_inputs(ctx):
    d = _upstream(ctx, ("ingest", "train.jsonl"), ("augment", "synthetic.jsonl"))
    d["catalog_generation_view"] = sha256_json(ctx.catalog.generation_view())
    d["supplementary"] = ctx.supplementary_hash()
    if ctx.config.qc.annotator == "dmrs":
        d["catalog"] = ctx.catalog.fingerprint
    return d


def _qc(ctx, out):
    train_d, _ = ctx.load_split()
    samples = read_jsonl(ctx.artifact("augment", "synthetic.jsonl"), SyntheticSample.from_dict)
    shortfalls = json.loads(ctx.artifact("augment", "augmentation.json").read_text()).get("shortfalls", {})
    res = run_qc(samples, train_d, ctx.catalog, ctx.supplementary, ctx.backend("nli"), ctx.config.qc,
                 seed=ctx.config.backends.seed)
    write_jsonl(out / "accepted.jsonl", res.accepted)
    write_jsonl(out / "all_verdicts.jsonl", samples)
    write_qc_report(out, res.class_rows, res.verdicts,
                    {"accounting": res.accounting, "generation_shortfalls": shortfalls})
    if res.any_rejected and ctx.config.qc.on_rejection == "halt":
        raise QcHalt(f"{sum(not v.accepted for v in res.verdicts)} QC batch(es) failed the kappa gate; "
                     f"see {out / 'qc_summary.txt'}")


def _features_inputs(ctx):
    d = _upstream(ctx, ("ingest", "train.jsonl"), ("ingest", "dev.jsonl"), ("stressor", "stressors.jsonl"),
                  ("qc", "accepted.jsonl"))
    d["catalog"] = ctx.catalog.fingerprint
    return d


def _features(ctx, out):
    train_d, dev_d = ctx.load_split()
    stressors = ctx.load_stressors()
    accepted = read_jsonl(ctx.artifact("qc", "accepted.jsonl"), SyntheticSample.from_dict)
    cfg = ctx.config.features
    write_jsonl(out / "train_rows.jsonl", build_rows(train_d, stressors, ctx.backends, ctx.catalog, cfg, accepted))
    write_jsonl(out / "dev_rows.jsonl", build_rows(dev_d, stressors, ctx.backends, ctx.catalog, cfg))


def _load_rows(path: Path) -> list[FeatureRow]:
    return read_jsonl(path, FeatureRow.from_dict)


def _train(ctx, out):
    rows = _load_rows(ctx.artifact("features", "train_rows.jsonl"))
    dev = _load_rows(ctx.artifact("features", "dev_rows.jsonl"))
    encoder = ctx.backend("encoder")
    model, hist = train(rows, dev, ctx.config.fusion, encoder)
    save_checkpoint(model, out / "ckpt", encoder, history=hist, catalog_fingerprint=ctx.catalog.fingerprint)


def _eval(ctx, out):
    dev = _load_rows(ctx.artifact("features", "dev_rows.jsonl"))
    model, encoder, _ = load_checkpoint(ctx.dir("train") / "ckpt", catalog_fingerprint=ctx.catalog.fingerprint)
    preds, dists = predict(model, dev, encoder)
    write_jsonl(out / "preds.jsonl", ({"id": r.id, "label": int(p), "probs": [round(float(x), 8) for x in q]}
                                      for r, p, q in zip(dev, preds, dists)))
    write_jsonl(out / "gold.jsonl", ({"id": r.id, "label": int(r.label)} for r in dev))
    golds = [int(r.label) for r in dev]
    report = evaluate(preds.tolist(), golds)
    emit_report(report, out / "report", sink=sink_analysis(report.confusion, ctx.config.analysis.sink_label))


def _analyze(ctx, out):
    train_d, dev_d = ctx.load_split()
    dialogues = train_d + dev_d
    components = default_cdi_components(ctx.backend("emotion"))
    cdi = {d.id: cdi_curve(d, components) for d in dialogues if len(d.seeker_turns()) >= 2}
    rows = [r for name in ("train_rows.jsonl", "dev_rows.jsonl")
            for r in _load_rows(ctx.artifact("features", name)) if r.source == "real"]
    emit_analysis(dialogues, out / "figs", cdi=cdi, threshold_z=ctx.config.analysis.cdi_threshold_z,
                  feature_rows=rows, mechanism_names=[m.name for m in ctx.catalog.mechanisms])


_BACKEND_KEYS = ("backends",)

PIPELINE: dict[str, Stage] = {s.name: s for s in (
    Stage("ingest", _ingest_inputs, ("split",), _ingest),
    Stage("stressor", lambda c: _upstream(c, ("ingest", "train.jsonl"), ("ingest", "dev.jsonl")),
          _BACKEND_KEYS + ("augmentation",), _stressor),
    Stage("augment", _augment_inputs, _BACKEND_KEYS + ("augmentation",), _augment),
    Stage("qc", _qc_inputs, _BACKEND_KEYS + ("qc",), _qc),
    Stage("features", _features_inputs, _BACKEND_KEYS + ("features",), _features),
    Stage("train", lambda c: {**_upstream(c, ("features", "train_rows.jsonl"), ("features", "dev_rows.jsonl")),
                              "catalog": c.catalog.fingerprint},
          _BACKEND_KEYS + ("fusion",), _train),
    Stage("eval", lambda c: {**_upstream(c, ("features", "dev_rows.jsonl"), ("train", "ckpt/weights.pt"),
                                         ("train", "ckpt/config.json"))},
          ("analysis",), _eval),
    Stage("analyze", lambda c: {**_upstream(c, ("ingest", "train.jsonl"), ("ingest", "dev.jsonl"),
                                            ("features", "train_rows.jsonl"), ("features", "dev_rows.jsonl")),
                                "catalog": c.catalog.fingerprint},
          _BACKEND_KEYS + ("analysis", "features"), _analyze),
)}


# ---------------------------------------------------------------------------
# manifests

def _outputs(stage_dir: Path) -> dict[str, str]:
    return {p.relative_to(stage_dir).as_posix(): sha256_file(p)
            for p in sorted(stage_dir.rglob("*")) if p.is_file() and p.name != MANIFEST}


def read_manifest(stage_dir: Path) -> Optional[dict]:
    p = stage_dir / MANIFEST
    if not p.is_file():
        return None
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError:
        return None


def manifest_mismatch(stage_dir: Path, inputs: dict[str, str], config: dict) -> Optional[str]:
    """Why the stage must re-run, or None when its manifest still matches."""
    m = read_manifest(stage_dir)
    if m is None:
        return "no manifest"
    old_inputs = m.get("inputs", {})
    changed = sorted(k for k in set(old_inputs) | set(inputs) if old_inputs.get(k) != inputs.get(k))
    if changed:
        return "input changed: " + ", ".join(changed)
    old_cfg = m.get("config", {})
    changed = sorted(k for k in set(old_cfg) | set(config) if old_cfg.get(k) != config.get(k))
    if changed:
        return "config changed: " + ", ".join(changed)
    for name, digest in m.get("outputs", {}).items():
        p = stage_dir / name
        if not p.is_file():
            return f"output missing: {name}"
        if sha256_file(p) != digest:
            return f"output modified: {name}"
    return None


def resolve_stages(stages: str | Sequence[str]) -> list[str]:
    if isinstance(stages, str):
        stages = STAGES if stages == "all" else [s.strip() for s in stages.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise PipelineError(f"unknown stage(s) {unknown}; choose from {', '.join(STAGES)}")
    return [s for s in STAGES if s in set(stages)]


def run_pipeline(config: PipelineConfig, stages: str | Sequence[str] = "all", *,
                 force: bool = False) -> dict[str, str]:
    """Run the requested stages in dependency order; returns {stage: "ran" | "skipped"}."""
    config.check_paths()
    ctx = Context(config)
    ctx.root.mkdir(parents=True, exist_ok=True)
    status = {}
    for name in resolve_stages(stages):
        stage = PIPELINE[name]
        stage_dir = ctx.dir(name)
        inputs = stage.inputs(ctx)
        snapshot = {s: config.section(s) for s in stage.config_sections}
        reason = "forced" if force else manifest_mismatch(stage_dir, inputs, snapshot)
        if reason is None:
            logger.info("stage %-8s skipped (manifest matches)", name)
            status[name] = "skipped"
            continue
        logger.info("stage %-8s running (%s)", name, reason)
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        t0 = time.perf_counter()
        stage.run(ctx, stage_dir)
        manifest = {"stage": name, "inputs": inputs, "config": snapshot, "outputs": _outputs(stage_dir),
                    "elapsed_s": round(time.perf_counter() - t0, 3),
                    "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        (stage_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        status[name] = "ran"
    return status
