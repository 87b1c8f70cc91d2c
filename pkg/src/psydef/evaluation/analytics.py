"""Dialogue-level analytics: trajectories, transition volatility, disclosure index, latency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from ..corpus import LABELS, Dialogue
from ..text import tokenize


@dataclass
class Transition:
    dialogue_id: str
    from_turn: int
    to_turn: int
    magnitude: int
    turn_gap: int

    @property
    def speed(self) -> float:
        """Levels per turn."""
        return self.magnitude / self.turn_gap


@dataclass
class TransitionStats:
    transitions: list[Transition] = field(default_factory=list)
    pearson_r: Optional[float] = None

    @property
    def pairs(self) -> list[tuple[int, float]]:
        return [(t.magnitude, t.speed) for t in self.transitions]


def defense_trajectory(dialogue: Dialogue) -> list[tuple[int, int]]:
    return [(t.index, t.label) for t in dialogue.labeled_turns()]


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Pearson correlation, or None with fewer than two points or zero variance."""
    if len(x) < 2:
        return None
    xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    dx, dy = xa - xa.mean(), ya - ya.mean()
    den = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if den == 0:
        return None
    return float((dx * dy).sum() / den)


def transition_stats(trajectories: Sequence, dialogue_ids: Optional[Sequence[str]] = None) -> TransitionStats:
    """Transitions between consecutive labeled points whose labels differ.

    ``trajectories`` holds lists of ``(turn_index, label)`` as produced by
    :func:`defense_trajectory`.
    """
    ids = list(dialogue_ids) if dialogue_ids is not None else [str(i) for i in range(len(trajectories))]
    out = []
    for did, traj in zip(ids, trajectories):
        for (t0, l0), (t1, l1) in zip(traj, traj[1:]):
            if l0 == l1:
                continue
            gap = t1 - t0
            if gap <= 0:
                raise ValueError(f"trajectory for {did} is not ordered by turn index")
            out.append(Transition(did, t0, t1, abs(l1 - l0), gap))
    stats = TransitionStats(out)
    stats.pearson_r = pearson([t.magnitude for t in out], [t.speed for t in out])
    return stats


# ---------------------------------------------------------------------------
# Composite Disclosure Index

class CdiPoint(NamedTuple):
    progress: float
    cdi: float
    turn_index: int


def _zscores(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def cdi_curve(dialogue: Dialogue, features: Callable[[str], Sequence[float]]) -> list[CdiPoint]:
    """Per seeker turn: mean of within-dialogue z-scores of the disclosure components.

    ``features(text)`` returns the component values for one utterance, e.g.
    ``(token_count, i_pronoun_density, emotion_intensity)`` (see :func:`default_cdi_components`).
    """
    seekers = dialogue.seeker_turns()
    if len(seekers) < 2:
        raise ValueError(f"dialogue {dialogue.id} needs at least 2 seeker turns for a CDI curve")
    comps = np.array([list(features(t.text)) for t in seekers], dtype=float)
    z = np.column_stack([_zscores(comps[:, j]) for j in range(comps.shape[1])])
    cdi = z.mean(axis=1)
    last = len(seekers) - 1
    return [CdiPoint(i / last, float(cdi[i]), t.index) for i, t in enumerate(seekers)]


def default_cdi_components(emotion_gateway) -> Callable[[str], tuple[float, float, float]]:
    from ..features import FIRST_PERSON_SINGULAR

    def components(text: str) -> tuple[float, float, float]:
        toks = tokenize(text)
        n = len(toks)
        pron = sum(t in FIRST_PERSON_SINGULAR for t in toks) / n if n else 0.0
        emo = emotion_gateway.score(text) if text else None
        intensity = emo.confidence if emo is not None and not emo.is_neutral else 0.0
        return float(n), pron, intensity

    return components


def opening_up_turn(cdi_points: Sequence[CdiPoint], threshold_z: float = 0.5) -> Optional[int]:
    for p in cdi_points:
        if p.cdi > threshold_z:
            return p.turn_index
    return None


# ---------------------------------------------------------------------------
# latency and corpus structure

def latency_by_label(dialogues: Sequence[Dialogue]) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {label: [] for label in LABELS}
    for d in dialogues:
        for t in d.labeled_turns():
            if t.response_time_s is not None:
                out[t.label].append(t.response_time_s)
    return out


def latency_summary(latencies: dict[int, list[float]]) -> dict[int, dict]:
    out = {}
    for label, vals in latencies.items():
        arr = np.asarray(vals, dtype=float)
        out[label] = {
            "n": len(vals),
            "mean": float(arr.mean()) if len(vals) else None,
            "variance": float(arr.var(ddof=1)) if len(vals) > 1 else None,
        }
    return out


def corpus_structure(dialogues: Sequence[Dialogue]) -> list[dict]:
    return [{"dialogue_id": d.id, "turns": len(d.turns),
             "tokens": sum(len(tokenize(t.text)) for t in d.turns)} for d in dialogues]
