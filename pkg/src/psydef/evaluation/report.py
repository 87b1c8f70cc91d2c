"""Machine-readable reports and flat plot-data tables."""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..corpus import LABEL_NAMES, LABELS, Dialogue, class_distribution
from ..features import log_activation
from .analytics import (
    CdiPoint, TransitionStats, corpus_structure, defense_trajectory, latency_by_label,
    latency_summary, opening_up_turn, transition_stats,
)
from .metrics import MetricsReport, SinkReport, off_diagonal


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])
    return path


def write_json(path: str | Path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _metrics_files(report: MetricsReport, out: Path, sink: Optional[SinkReport]) -> list[Path]:
    doc = report.to_dict()
    if sink is not None:
        doc["sink"] = sink.to_dict()
    labels = range(report.confusion.shape[0])
    files = [
        write_json(out / "metrics.json", doc),
        write_table(out / "per_class_metrics.csv", ["label", "class", "precision", "recall", "f1", "support"],
                    [(k, LABEL_NAMES.get(k, k), m.precision, m.recall, m.f1, m.support)
                     for k, m in report.per_class.items()]),
        write_table(out / "confusion.csv", ["gold"] + [f"pred_{j}" for j in labels],
                    [[i] + list(map(int, row)) for i, row in enumerate(report.confusion)]),
        write_table(out / "confusion_row_norm.csv", ["gold"] + [f"pred_{j}" for j in labels],
                    [[i] + [float(x) for x in row] for i, row in enumerate(report.confusion_row_norm)]),
        write_table(out / "off_diagonal.csv", ["gold", "pred", "count"], off_diagonal(report.confusion)),
    ]
    if sink is not None:
        files.append(write_table(out / "sink.csv", ["gold", "absorbed", "ratio"],
                                 [(k, sink.absorbed[k], sink.absorbed_ratio[k]) for k in sink.absorbed]))
    return files


def emit_report(obj, path: str | Path, **kw) -> list[Path]:
    """Write one result object as JSON plus its plot-data table(s) under directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, MetricsReport):
        return _metrics_files(obj, out, kw.get("sink"))
    if isinstance(obj, SinkReport):
        return [write_json(out / "sink.json", obj.to_dict())]
    if isinstance(obj, TransitionStats):
        return [
            write_table(out / "magnitude_speed.csv", ["magnitude", "speed"], obj.pairs),
            write_table(out / "transitions.csv",
                        ["dialogue_id", "from_turn", "to_turn", "magnitude", "turn_gap", "speed"],
                        [(t.dialogue_id, t.from_turn, t.to_turn, t.magnitude, t.turn_gap, t.speed)
                         for t in obj.transitions]),
            write_json(out / "transition_stats.json",
                       {"n_transitions": len(obj.transitions), "pearson_r": obj.pearson_r,
                        "speed_unit": "levels_per_turn"}),
        ]
    raise TypeError(f"don't know how to emit {type(obj).__name__}")


def mechanism_activation_rows(rows: Sequence, mechanism_names: Sequence[str]) -> list[tuple]:
    """(label, mechanism, mean raw score, mean log score) for each labeled class present in ``rows``."""
    by_label = defaultdict(list)
    for r in rows:
        if r.label is not None and r.mechanism_scores is not None:
            by_label[r.label].append(r.mechanism_scores)
    out = []
    for label in sorted(by_label):
        mat = np.vstack(by_label[label])
        raw = mat.mean(axis=0)
        logs = log_activation(mat).mean(axis=0)
        for k, name in enumerate(mechanism_names):
            out.append((label, name, float(raw[k]), float(logs[k])))
    return out


def emit_analysis(dialogues: Sequence[Dialogue], out_dir: str | Path, *,
                  cdi: Optional[dict[str, list[CdiPoint]]] = None, threshold_z: float = 0.5,
                  feature_rows: Optional[Sequence] = None,
                  mechanism_names: Optional[Sequence[str]] = None) -> list[Path]:
    """Corpus analytics plot data: distribution, trajectories, volatility, CDI, latency, structure."""
    out = Path(out_dir)
    dialogues = sorted(dialogues, key=lambda d: d.id)
    files = []
    counts = class_distribution(dialogues)
    files.append(write_table(out / "class_distribution.csv", ["label", "class", "count"],
                             [(k, LABEL_NAMES[k], counts[k]) for k in LABELS]))

    trajs = [defense_trajectory(d) for d in dialogues]
    files.append(write_table(out / "trajectory.csv", ["dialogue_id", "turn_index", "label"],
                             [(d.id, ti, lab) for d, tr in zip(dialogues, trajs) for ti, lab in tr]))
    stats = transition_stats(trajs, [d.id for d in dialogues])
    files.extend(emit_report(stats, out))

    summary = {"n_dialogues": len(dialogues), "class_distribution": {str(k): v for k, v in counts.items()},
               "pearson_r_magnitude_speed": stats.pearson_r}

    if cdi is not None:
        files.append(write_table(out / "cdi.csv", ["dialogue_id", "turn_index", "progress", "cdi"],
                                 [(did, p.turn_index, p.progress, p.cdi)
                                  for did in sorted(cdi) for p in cdi[did]]))
        opening = {did: opening_up_turn(cdi[did], threshold_z) for did in sorted(cdi)}
        files.append(write_table(out / "opening_up.csv", ["dialogue_id", "opening_turn"], opening.items()))
        hist = Counter(t for t in opening.values() if t is not None)
        files.append(write_table(out / "opening_up_hist.csv", ["turn_index", "count"], sorted(hist.items())))
        summary["opening_up_threshold_z"] = threshold_z
        summary["opening_up_found"] = sum(t is not None for t in opening.values())

    lat = latency_by_label(dialogues)
    files.append(write_table(out / "latency_by_label.csv", ["label", "response_time_s"],
                             [(k, v) for k in LABELS for v in lat[k]]))
    lat_sum = latency_summary(lat)
    files.append(write_table(out / "latency_summary.csv", ["label", "n", "mean", "variance"],
                             [(k, s["n"], s["mean"], s["variance"]) for k, s in lat_sum.items()]))
    summary["latency_available"] = any(lat[k] for k in LABELS)

    struct = corpus_structure(dialogues)
    files.append(write_table(out / "turns_per_dialogue.csv", ["dialogue_id", "turns"],
                             [(s["dialogue_id"], s["turns"]) for s in struct]))
    files.append(write_table(out / "tokens_per_dialogue.csv", ["dialogue_id", "tokens"],
                             [(s["dialogue_id"], s["tokens"]) for s in struct]))
    if struct:
        summary["mean_turns"] = float(np.mean([s["turns"] for s in struct]))
        summary["mean_tokens"] = float(np.mean([s["tokens"] for s in struct]))

    if feature_rows is not None and mechanism_names is not None:
        files.append(write_table(out / "mechanism_activations.csv",
                                 ["label", "mechanism", "raw_mean", "log_mean"],
                                 mechanism_activation_rows(feature_rows, mechanism_names)))
    files.append(write_json(out / "analysis.json", summary))
    return files
