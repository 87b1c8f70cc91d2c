"""Salient-stressor identification for seeker turns."""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass
from importlib import resources

from .backends import GenerationParams
from .corpus import Dialogue, render_history

logger = logging.getLogger(__name__)

FALLBACK_CATEGORY = "Unspecified"
HISTORY_TURNS = 12

_CATEGORY_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*)?\**\s*Stressor Category\s*\**\s*:\s*(.*?)\s*$",
                          re.IGNORECASE | re.MULTILINE)
_DESCRIPTION_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*)?\**\s*Description\s*\**\s*:\s*(.*?)\s*$",
                             re.IGNORECASE | re.MULTILINE)


class StressorParseError(ValueError):
    def __init__(self, message: str, reply: str):
        super().__init__(message)
        self.reply = reply


@dataclass
class StressorRecord:
    category: str
    description: str
    dialogue_id: str = ""
    turn_index: int = -1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StressorRecord":
        return cls(d["category"], d.get("description", ""), d.get("dialogue_id", ""),
                   int(d.get("turn_index", -1)))


def load_template(name: str) -> str:
    return resources.files("psydef.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


STRESSOR_TEMPLATE = load_template("stressor")


def build_stressor_prompt(history: str, target_turn: str, template: str = STRESSOR_TEMPLATE) -> str:
    if not target_turn:
        raise ValueError("target_turn must be non-empty")
    return template.format_map({"history": history, "target_turn": target_turn})


def parse_stressor_reply(reply: str) -> tuple[str, str]:
    cat = _CATEGORY_RE.search(reply)
    desc = _DESCRIPTION_RE.search(reply)
    if not cat and not desc:
        raise StressorParseError("no 'Stressor Category:' or 'Description:' line in reply", reply)
    category = cat.group(1).strip().strip('"*') if cat else ""
    description = desc.group(1).strip().strip('"*') if desc else ""
    if not category:
        raise StressorParseError("empty stressor category", reply)
    return category, description


def identify_stressor(dialogue: Dialogue, turn_index: int, gateway,
                      params: GenerationParams = GenerationParams(max_tokens=96, temperature=0.0, seed=0),
                      parse_attempts: int = 2) -> StressorRecord:
    """Ask the generator for the stressor behind one seeker turn.

    Malformed replies are retried with a bumped seed, then fall back to the
    "Unspecified" category. Gateway exhaustion propagates.
    """
    if not 0 <= turn_index < len(dialogue.turns):
        raise IndexError(f"turn {turn_index} out of range for dialogue {dialogue.id}")
    target = dialogue.turns[turn_index]
    if not target.is_seeker:
        raise ValueError(f"turn {turn_index} of dialogue {dialogue.id} is a {target.speaker} turn")
    history = render_history(dialogue.turns[:turn_index], HISTORY_TURNS)
    prompt = build_stressor_prompt(history, target.text)
    base_seed = params.seed or 0
    for attempt in range(parse_attempts):
        reply = gateway.complete(prompt, GenerationParams(params.max_tokens, params.temperature,
                                                          base_seed + attempt))
        try:
            category, description = parse_stressor_reply(reply)
        except StressorParseError:
            continue
        return StressorRecord(category, description, dialogue.id, turn_index)
    logger.warning("unparseable stressor reply for %s turn %d; using %r",
                   dialogue.id, turn_index, FALLBACK_CATEGORY)
    return StressorRecord(FALLBACK_CATEGORY, "", dialogue.id, turn_index)
