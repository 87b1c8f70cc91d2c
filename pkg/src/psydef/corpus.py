"""Dialogue corpus loading, validation, splitting and counting.

One dialogue per line::

    {"id": "d1", "turns": [{"index": 0, "speaker": "seeker", "text": "...", "label": 7,
                            "response_time_s": 4.2}, ...]}
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

LABELS = tuple(range(9))
SEEKER = "seeker"
SUPPORTER = "supporter"
SPEAKERS = (SEEKER, SUPPORTER)

LABEL_NAMES = {
    0: "No Defense",
    1: "Action",
    2: "Major Image",
    3: "Disavowal",
    4: "Minor Image",
    5: "Neurotic",
    6: "Obsessional",
    7: "High-Adaptive",
    8: "Needs Info",
}


class CorpusError(ValueError):
    """Invalid corpus file or record."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class Turn:
    index: int
    speaker: str
    text: str
    label: Optional[int] = None
    response_time_s: Optional[float] = None

    @property
    def is_seeker(self) -> bool:
        return self.speaker == SEEKER

    def to_dict(self) -> dict:
        d = {"index": self.index, "speaker": self.speaker, "text": self.text}
        if self.label is not None:
            d["label"] = self.label
        if self.response_time_s is not None:
            d["response_time_s"] = self.response_time_s
        return d


@dataclass
class Dialogue:
    id: str
    turns: list[Turn] = field(default_factory=list)

    def seeker_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.is_seeker]

    def labeled_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.is_seeker and t.label is not None]

    def to_dict(self) -> dict:
        return {"id": self.id, "turns": [t.to_dict() for t in self.turns]}


def _turn_from_record(rec: dict, pos: int) -> Turn:
    if not isinstance(rec, dict):
        raise CorpusError("turn must be an object", field=f"turns[{pos}]")

    def f(name: str) -> str:
        return f"turns[{pos}].{name}"

    for key in ("index", "speaker", "text"):
        if key not in rec:
            raise CorpusError("missing required key", field=f(key))
    index = rec["index"]
    if not isinstance(index, int) or isinstance(index, bool):
        raise CorpusError("index must be an integer", field=f("index"))
    speaker = rec["speaker"]
    if speaker not in SPEAKERS:
        raise CorpusError(f"speaker must be one of {SPEAKERS}, got {speaker!r}", field=f("speaker"))
    text = rec["text"]
    if not isinstance(text, str):
        raise CorpusError("text must be a string", field=f("text"))

    label = rec.get("label")
    if label is not None:
        if not isinstance(label, int) or isinstance(label, bool) or label not in LABELS:
            raise CorpusError(f"label must be an integer in 0..8, got {label!r}", field=f("label"))
        if speaker != SEEKER:
            raise CorpusError(f"turn {index} is a {speaker} turn but carries label {label}", field=f("label"))
        if not text.strip():
            raise CorpusError(f"labeled turn {index} has empty text", field=f("text"))

    rt = rec.get("response_time_s")
    if rt is not None:
        if isinstance(rt, bool) or not isinstance(rt, (int, float)) or rt < 0:
            raise CorpusError(f"response_time_s must be a non-negative number, got {rt!r}",
                              field=f("response_time_s"))
        rt = float(rt)
    return Turn(index=index, speaker=speaker, text=text, label=label, response_time_s=rt)


def dialogue_from_record(rec: dict) -> Dialogue:
    """Validate one decoded record. Raises CorpusError without line info."""
    if not isinstance(rec, dict):
        raise CorpusError("record must be a JSON object")
    if not isinstance(rec.get("id"), str) or not rec["id"]:
        raise CorpusError("id must be a non-empty string", field="id")
    turns_raw = rec.get("turns")
    if not isinstance(turns_raw, list):
        raise CorpusError("turns must be a list", field="turns")
    turns = [_turn_from_record(t, i) for i, t in enumerate(turns_raw)]
    for pos, t in enumerate(turns):
        if t.index != pos:
            raise CorpusError(f"turn indices must be contiguous from 0; expected {pos}, got {t.index}",
                              field=f"turns[{pos}].index")
    if not any(t.is_seeker for t in turns):
        raise CorpusError("dialogue has no seeker turn", field="turns")
    return Dialogue(id=rec["id"], turns=turns)


def parse_corpus_lines(lines: Iterable[str]) -> list[Dialogue]:
    dialogues: list[Dialogue] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON ({exc.msg})", line=lineno) from None
        try:
            dlg = dialogue_from_record(rec)
        except CorpusError as exc:
            raise CorpusError(str(exc), line=lineno, field=exc.field) from None
        if dlg.id in seen:
            raise CorpusError(f"duplicate dialogue id {dlg.id!r} (first seen on line {seen[dlg.id]})",
                              line=lineno, field="id")
        seen[dlg.id] = lineno
        dialogues.append(dlg)
    return dialogues


def load_corpus(path: str | Path) -> list[Dialogue]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_corpus_lines(fh)


def save_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_dict(), ensure_ascii=False) + "\n")


def class_distribution(dialogues: Iterable[Dialogue]) -> dict[int, int]:
    """Count labeled seeker turns per label; all nine labels are always present."""
    counts = {label: 0 for label in LABELS}
    for d in dialogues:
        for t in d.labeled_turns():
            counts[t.label] += 1
    return counts


def split_corpus(dialogues: list[Dialogue], ratios: tuple[float, float] = (0.8, 0.2),
                 seed: int = 0) -> tuple[list[Dialogue], list[Dialogue]]:
    """Shuffle at dialogue granularity and cut into train/dev.

    Dialogues not covered when ``sum(ratios) < 1`` are left out of both splits.
    """
    train_ratio, dev_ratio = ratios
    if train_ratio <= 0 or dev_ratio < 0 or train_ratio + dev_ratio > 1 + 1e-12:
        raise ValueError(f"ratios must be positive and sum to at most 1, got {ratios}")
    if dev_ratio > 0 and len(dialogues) < 2:
        raise ValueError("need at least 2 dialogues for a non-empty dev split")
    order = list(range(len(dialogues)))
    random.Random(seed).shuffle(order)
    n = len(dialogues)
    n_train = int(round(train_ratio * n))
    n_dev = int(round(dev_ratio * n))
    if dev_ratio > 0:
        n_dev = max(1, n_dev)
        n_train = min(n_train, n - n_dev)
    n_dev = min(n_dev, n - n_train)
    train = [dialogues[i] for i in order[:n_train]]
    dev = [dialogues[i] for i in order[n_train:n_train + n_dev]]
    return train, dev


def render_history(turns: list[Turn], max_turns: int = 12) -> str:
    """Render "Seeker: ..." / "Supporter: ..." lines, oldest first, keeping the last ``max_turns``."""
    kept = turns[-max_turns:] if max_turns > 0 else []
    return "\n".join(f"{t.speaker.capitalize()}: {t.text}" for t in kept)
