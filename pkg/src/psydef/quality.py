"""Quality control for synthetic batches: Self-BLEU, NLI adherence, Cohen's kappa gate."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from .catalog import DefenseDefinition

logger = logging.getLogger(__name__)

KAPPA_THRESHOLD = 0.60
MIN_BATCH = 20
HYPOTHESIS_TEMPLATE = "This message shows {mechanism_name} ({level_name}) defensive functioning: {definition}."


# ---------------------------------------------------------------------------
# Self-BLEU

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: np.ndarray) -> int:
    # ties go to the shorter reference
    dist = np.abs(ref_lens - hyp_len)
    best = dist.min()
    return int(ref_lens[dist == best].min())


def self_bleu(texts: Sequence[str], max_n: int = 4) -> float:
    """Mean BLEU of each text against all the others (higher = less diverse).

    Per hypothesis: clipped n-gram precisions for n = 1..max_n (orders longer than the
    hypothesis are left out of the geometric mean), add-one smoothing
    ``1 / (total + 1)`` for a zero match count at n >= 2, brevity penalty against the
    closest reference length.
    """
    if len(texts) < 2:
        raise ValueError("self_bleu needs at least two texts")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    toks = [t.lower().split() for t in texts]
    lens = np.array([len(t) for t in toks])
    m = len(toks)

    # per order: every text's n-gram counts, plus the two largest counts of each n-gram across texts
    order_counts = []
    for n in range(1, max_n + 1):
        counts = [_ngrams(t, n) for t in toks]
        top: dict[tuple, list] = {}
        for c in counts:
            for g, k in c.items():
                entry = top.get(g)
                if entry is None:
                    top[g] = [k, 1, 0]  # best, how many texts hit best, second best
                elif k > entry[0]:
                    entry[2] = entry[0]
                    entry[0], entry[1] = k, 1
                elif k == entry[0]:
                    entry[1] += 1
                elif k > entry[2]:
                    entry[2] = k
        order_counts.append((counts, top))

    scores = []
    for i in range(m):
        c = int(lens[i])
        others = np.delete(lens, i)
        if c == 0:
            scores.append(1.0 if (others == 0).any() else 0.0)
            continue
        log_p = []
        zero = False
        for n, (counts, top) in enumerate(order_counts, start=1):
            total = c - n + 1
            if total <= 0:
                break
            matched = 0
            for g, k in counts[i].items():
                best, n_best, second = top[g]
                max_other = best if (k < best or n_best > 1) else second
                matched += min(k, max_other)
            if matched == 0:
                if n == 1:
                    zero = True
                    break
                log_p.append(-math.log(total + 1))
            else:
                log_p.append(math.log(matched / total))
        if zero:
            scores.append(0.0)
            continue
        r = _closest_ref_len(c, others)
        bp = 1.0 if c > r else math.exp(1.0 - r / c)
        scores.append(bp * math.exp(sum(log_p) / len(log_p)))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# semantic adherence

def adherence_hypothesis(definition: DefenseDefinition, template: str = HYPOTHESIS_TEMPLATE) -> str:
    if not definition.definition or not definition.definition.strip():
        raise ValueError(f"empty definition for {definition.mechanism_name!r}")
    return template.format(mechanism_name=definition.mechanism_name,
                           level_name=definition.level_name or f"Level {definition.level}",
                           level=definition.level, definition=definition.definition.rstrip(". "))


def semantic_adherence(texts: Sequence[str], definition: DefenseDefinition, nli_gateway,
                       template: str = HYPOTHESIS_TEMPLATE) -> float:
    """Mean entailment probability that each text entails the label hypothesis."""
    if not texts:
        raise ValueError("semantic_adherence needs at least one text")
    hypothesis = adherence_hypothesis(definition, template)
    return float(np.mean([nli_gateway.entail(t, hypothesis) for t in texts]))


# ---------------------------------------------------------------------------
# agreement

def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa, computed from integer counts so boundary values are exact."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("cohens_kappa needs non-empty label lists")
    agree = sum(x == y for x, y in zip(a, b))
    ca, cb = Counter(a), Counter(b)
    chance = sum(ca[k] * cb[k] for k in ca)  # = n^2 * p_e
    denom = n * n - chance
    if denom == 0:
        return 1.0 if list(a) == list(b) else 0.0
    return (n * agree - chance) / denom


def passes_gate(kappa: Optional[float], threshold: float = KAPPA_THRESHOLD) -> bool:
    return kappa is not None and kappa >= threshold


@dataclass
class QcVerdict:
    kappa: Optional[float]
    accepted: bool
    self_bleu: Optional[float] = None
    semantic_adherence: Optional[float] = None
    status: str = "evaluated"  # or "unevaluable"
    threshold: float = KAPPA_THRESHOLD
    n: int = 0
    labels: list[int] = field(default_factory=list)
    round: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def kappa_gate(batch: Sequence, annotator: Callable[[str], int], threshold: float = KAPPA_THRESHOLD, *,
               nli_gateway=None, definitions: Optional[dict[str, DefenseDefinition]] = None,
               template: str = HYPOTHESIS_TEMPLATE):
    """Gate one batch of SyntheticSample by machine-annotator agreement.

    Returns ``(verdict, accepted_samples)``; rejected and unevaluable batches return an
    empty list. The verdict is attached to every sample's ``qc`` field.
    """
    if not batch:
        raise ValueError("kappa_gate needs a non-empty batch")
    intended = [s.intended_label for s in batch]
    texts = [s.text for s in batch]
    labels = sorted(set(intended))
    verdict = QcVerdict(kappa=None, accepted=False, threshold=threshold, n=len(batch),
                        labels=labels, round=min(s.round for s in batch))
    if len(texts) >= 2:
        verdict.self_bleu = self_bleu(texts)
    if nli_gateway is not None and definitions:
        verdict.semantic_adherence = mechanism_adherence(batch, definitions, nli_gateway, template)
    try:
        predicted = [int(annotator(t)) for t in texts]
    except Exception as exc:  # any annotator failure makes the batch unevaluable
        logger.warning("annotator failed on batch round=%s: %s", verdict.round, exc)
        verdict.status = "unevaluable"
    else:
        verdict.kappa = cohens_kappa(intended, predicted)
        verdict.accepted = passes_gate(verdict.kappa, threshold)
    for s in batch:
        s.qc = verdict.to_dict()
    return verdict, (list(batch) if verdict.accepted else [])


def mechanism_adherence(samples: Sequence, definitions: dict[str, DefenseDefinition], nli_gateway,
                        template: str = HYPOTHESIS_TEMPLATE) -> float:
    """Mean adherence with each sample scored against its own mechanism's definition."""
    by_mech = defaultdict(list)
    for s in samples:
        by_mech[s.mechanism_name].append(s.text)
    scores = []
    for name, texts in by_mech.items():
        hyp = adherence_hypothesis(definitions[name], template)
        scores.extend(nli_gateway.entail(t, hyp) for t in texts)
    return float(np.mean(scores))


def make_batches(samples: Sequence, min_size: int = MIN_BATCH) -> list[list]:
    """Group samples into gating batches, one per generation round across all classes.

    Mixed-label batches keep kappa informative (on a single-label batch it can only be 0 or 1).
    Rounds smaller than ``min_size`` merge into the next round; a trailing undersized group
    merges into the previous batch; if everything is below ``min_size`` it forms one batch.
    """
    by_round: dict[int, list] = defaultdict(list)
    for s in samples:
        by_round[s.round].append(s)
    merged: list[list] = []
    pending: list = []
    for r in sorted(by_round):
        pending = pending + by_round[r]
        if len(pending) >= min_size:
            merged.append(pending)
            pending = []
    if pending:
        if merged:
            merged[-1] = merged[-1] + pending
        else:
            merged.append(pending)
    return merged


# ---------------------------------------------------------------------------
# annotators

class TfidfAnnotator:
    """Secondary classifier trained on real (pre-augmentation) turns only."""

    def __init__(self, texts: Sequence[str], labels: Sequence[int], seed: int = 0):
        from sklearn.feature_extraction.text import TfidfVectorizer
        from sklearn.linear_model import LogisticRegression

        if not texts:
            raise ValueError("annotator needs training texts")
        self.classes = sorted(set(labels))
        self.vectorizer = TfidfVectorizer(ngram_range=(1, 2), sublinear_tf=True, min_df=1,
                                          token_pattern=r"(?u)\b\w+\b")
        x = self.vectorizer.fit_transform(texts)
        self.model = None
        if len(self.classes) > 1:
            self.model = LogisticRegression(C=10.0, max_iter=2000, random_state=seed)
            self.model.fit(x, list(labels))

    def __call__(self, text: str) -> int:
        if self.model is None:
            return self.classes[0]
        return int(self.model.predict(self.vectorizer.transform([text]))[0])


# ---------------------------------------------------------------------------
# reporting

QC_COLUMNS = ["class", "label", "N", "SB", "SA"]


def qc_class_rows(accepted: Sequence, all_samples: Sequence, definitions: dict[str, DefenseDefinition],
                  nli_gateway, label_names: dict[int, str],
                  template: str = HYPOTHESIS_TEMPLATE) -> list[dict]:
    """Table-1-style rows: accepted count, Self-BLEU and adherence per augmented class."""
    by_label = defaultdict(list)
    for s in accepted:
        by_label[s.intended_label].append(s)
    generated = {s.intended_label for s in all_samples}
    rows = []
    for label in sorted(generated):
        kept = by_label.get(label, [])
        texts = [s.text for s in kept]
        rows.append({
            "class": label_names.get(label, str(label)),
            "label": label,
            "N": len(kept),
            "SB": round(self_bleu(texts), 6) if len(texts) >= 2 else None,
            "SA": round(mechanism_adherence(kept, definitions, nli_gateway, template), 6) if kept else None,
        })
    return rows


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return round(float(np.mean(vals)), 6) if vals else None


def write_qc_report(out_dir: str | Path, class_rows: list[dict], verdicts: list[QcVerdict],
                    extra: Optional[dict] = None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    avg = {"class": "Avg.", "label": "", "N": "", "SB": _mean(r["SB"] for r in class_rows),
           "SA": _mean(r["SA"] for r in class_rows)}
    paths = {"table": out_dir / "qc_report.csv", "batches": out_dir / "qc_batches.csv",
             "json": out_dir / "qc_report.json", "summary": out_dir / "qc_summary.txt"}

    with paths["table"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=QC_COLUMNS)
        w.writeheader()
        for r in class_rows + [avg]:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in QC_COLUMNS})

    batch_cols = ["round", "labels", "n", "kappa", "accepted", "status", "self_bleu", "semantic_adherence"]
    with paths["batches"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=batch_cols)
        w.writeheader()
        for v in verdicts:
            d = v.to_dict()
            d["labels"] = " ".join(map(str, d["labels"]))
            w.writerow({k: ("" if d[k] is None else d[k]) for k in batch_cols})

    doc = {"classes": class_rows, "average": avg, "batches": [v.to_dict() for v in verdicts]}
    if extra:
        doc.update(extra)
    paths["json"].write_text(json.dumps(doc, indent=2))

    lines = [f"{'Class':<16}{'Label':>6}{'N':>6}{'SB':>8}{'SA':>8}"]
    for r in class_rows + [avg]:
        sb = "-" if r["SB"] is None else f"{r['SB']:.3f}"
        sa = "-" if r["SA"] is None else f"{r['SA']:.3f}"
        lines.append(f"{r['class']:<16}{r['label']!s:>6}{r['N']!s:>6}{sb:>8}{sa:>8}")
    n_acc = sum(v.accepted for v in verdicts)
    n_unev = sum(v.status == "unevaluable" for v in verdicts)
    lines.append(f"batches: {len(verdicts)} total, {n_acc} accepted, "
                 f"{len(verdicts) - n_acc - n_unev} rejected, {n_unev} unevaluable")
    paths["summary"].write_text("\n".join(lines) + "\n")
    return paths
