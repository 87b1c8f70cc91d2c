"""Per-turn features: 7 linguistic heuristics and the 30-dim DMRS defense profile."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backends import EmotionResult
from .catalog import DmrsCatalog
from .stressor import StressorRecord
from .text import tokenize

HEURISTIC_NAMES = (
    "utterance_length_norm", "i_pronoun_density", "insight_density", "phatic_flag",
    "mature_coping_flag", "emotion_nonneutral_flag", "emotion_intensity",
)
HEURISTIC_DIM = len(HEURISTIC_NAMES)

FIRST_PERSON_SINGULAR = frozenset({"i", "me", "my", "mine", "myself", "i'm", "i've", "i'd", "i'll"})
INSIGHT_LEXICON = ("realize", "understand", "reason", "because", "think", "know", "learn",
                   "reflect", "aware", "meant")
FILLER_LEXICON = frozenset({
    "ok", "okay", "k", "yes", "yeah", "yep", "no", "nope", "sure", "thanks", "thank you",
    "thanks a lot", "hmm", "hm", "mhm", "uh huh", "i see", "alright", "right", "cool", "lol",
    "hi", "hello", "hey", "bye", "goodbye", "maybe", "fine", "got it", "oh", "ah",
})


@dataclass
class HeuristicConfig:
    length_cap: int = 64
    mature_min_tokens: int = 12  # strictly greater than
    insight_threshold: float = 0.08
    pronoun_threshold: float = 0.06
    phatic_max_tokens: int = 3
    insight_lexicon: tuple[str, ...] = INSIGHT_LEXICON
    filler_lexicon: frozenset = field(default=FILLER_LEXICON)


def _is_insight(token: str, lexicon: Sequence[str]) -> bool:
    # prefix match covers inflections: realized, understanding, thinking, knowing
    return any(token.startswith(w) for w in lexicon)


def extract_heuristics(text: str, emotion: EmotionResult,
                       config: HeuristicConfig = HeuristicConfig()) -> np.ndarray:
    toks = tokenize(text)
    n = len(toks)
    if n:
        pron = sum(t in FIRST_PERSON_SINGULAR for t in toks) / n
        insight = sum(_is_insight(t, config.insight_lexicon) for t in toks) / n
    else:
        pron = insight = 0.0
    phatic = n <= config.phatic_max_tokens or " ".join(toks) in config.filler_lexicon
    mature = (n > config.mature_min_tokens and insight >= config.insight_threshold
              and pron >= config.pronoun_threshold)
    nonneutral = not emotion.is_neutral
    return np.array([
        min(n, config.length_cap) / config.length_cap,
        pron,
        insight,
        float(phatic),
        float(mature),
        float(nonneutral),
        emotion.confidence if nonneutral else 0.0,
    ])


# ---------------------------------------------------------------------------
# DMRS profile

def score_indicators(text: str, catalog: DmrsCatalog, nli_gateway) -> np.ndarray:
    """Entailment probability of every indicator statement given the utterance, in catalog order."""
    hypotheses = [ind.statement for ind in catalog.indicators]
    if hasattr(nli_gateway, "entail_batch"):
        scores = nli_gateway.entail_batch(text, hypotheses)
    else:
        scores = [nli_gateway.entail(text, h) for h in hypotheses]
    out = np.asarray(scores, dtype=float)
    if out.shape != (len(hypotheses),):
        raise ValueError(f"expected {len(hypotheses)} indicator scores, got shape {out.shape}")
    return out


def mechanism_means(indicator_scores: np.ndarray, catalog: DmrsCatalog) -> np.ndarray:
    scores = np.asarray(indicator_scores, dtype=float)
    if scores.shape != (len(catalog.indicators),):
        raise ValueError(f"indicator vector has shape {scores.shape}, catalog has "
                         f"{len(catalog.indicators)} indicators")
    idx = np.asarray(catalog.indicator_mechanism)
    k = len(catalog.mechanisms)
    sums = np.bincount(idx, weights=scores, minlength=k)
    return sums / np.bincount(idx, minlength=k)


def aggregate_mechanisms(indicator_scores: np.ndarray, catalog: DmrsCatalog) -> np.ndarray:
    """Mean indicator probability per mechanism, L1-normalized; all-zero mass gives a uniform profile."""
    means = mechanism_means(indicator_scores, catalog)
    total = means.sum()
    if total <= 0:
        return np.full(len(means), 1.0 / len(means))
    return means / total


def dmrs_level(profile: np.ndarray, catalog: DmrsCatalog) -> int:
    """Level with the largest summed mechanism score; ties go to the lowest level id."""
    profile = np.asarray(profile, dtype=float)
    levels = np.asarray(catalog.mechanism_level)
    ids = sorted(set(catalog.mechanism_level))
    sums = np.array([profile[levels == lv].sum() for lv in ids])
    return int(ids[int(np.argmax(sums))])  # argmax returns the first maximum


class DmrsLevelAnnotator:
    """Zero-training annotator: text -> DMRS level 1..7 via the profile argmax."""

    def __init__(self, catalog: DmrsCatalog, nli_gateway):
        self.catalog = catalog
        self.nli = nli_gateway

    def __call__(self, text: str) -> int:
        return dmrs_level(aggregate_mechanisms(score_indicators(text, self.catalog, self.nli),
                                               self.catalog), self.catalog)


# ---------------------------------------------------------------------------
# rows

@dataclass
class FeatureRow:
    input_text: str
    heuristics: np.ndarray
    profile: np.ndarray
    label: Optional[int] = None
    id: str = ""
    source: str = "real"
    mechanism_scores: Optional[np.ndarray] = None  # un-normalized means, for activation plots

    def to_dict(self) -> dict:
        d = {"id": self.id, "input_text": self.input_text, "heuristics": [float(x) for x in self.heuristics],
             "profile": [float(x) for x in self.profile], "label": self.label, "source": self.source}
        if self.mechanism_scores is not None:
            d["mechanism_scores"] = [float(x) for x in self.mechanism_scores]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRow":
        ms = d.get("mechanism_scores")
        return cls(d["input_text"], np.asarray(d["heuristics"], dtype=float), np.asarray(d["profile"], dtype=float),
                   d.get("label"), d.get("id", ""), d.get("source", "real"),
                   None if ms is None else np.asarray(ms, dtype=float))


def format_input(stressor_category: str, text: str) -> str:
    return f"[Stressor:{stressor_category}|Turn:{text}]"


def build_feature_row(text: str, stressor: StressorRecord, backends, catalog: DmrsCatalog, *,
                      label: Optional[int] = None, row_id: str = "", source: str = "real",
                      config: HeuristicConfig = HeuristicConfig()) -> FeatureRow:
    if stressor is None:
        raise ValueError("a stressor record is required (use the 'Unspecified' fallback if unknown)")
    heur = extract_heuristics(text, backends.emotion.score(text), config)
    scores = score_indicators(text, catalog, backends.nli)
    means = mechanism_means(scores, catalog)
    return FeatureRow(format_input(stressor.category, text), heur, aggregate_mechanisms(scores, catalog),
                      label, row_id, source, means)


def log_activation(values: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return np.log(np.maximum(np.asarray(values, dtype=float), eps))


def token_count(text: str) -> int:
    return len(tokenize(text))

