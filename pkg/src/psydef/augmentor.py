"""Augmentation planning, generation prompts and synthetic sample production."""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backends import GenerationParams
from .catalog import DefenseDefinition, DmrsCatalog, definitions_for_label
from .corpus import LABELS, Dialogue, render_history
from .stressor import HISTORY_TURNS, StressorRecord, load_template

logger = logging.getLogger(__name__)

MAJORITY_LABEL = 7
GENERATION_TEMPLATE = load_template("generation")


class GenerationParseError(ValueError):
    pass


class GenerationShortfall(RuntimeError):
    def __init__(self, label: int, produced: list, target: int, calls: int):
        super().__init__(f"label {label}: produced {len(produced)} of {target} samples "
                         f"within the budget of {calls} calls (shortfall {target - len(produced)})")
        self.label = label
        self.samples = produced
        self.target = target
        self.calls = calls


# ---------------------------------------------------------------------------
# planning

@dataclass(frozen=True)
class Strategy:
    kind: str  # "times_k" | "cap"
    value: int
    cap_basis: str = "total"

    def __post_init__(self):
        if self.kind not in ("times_k", "cap"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.value < 1:
            raise ValueError(f"strategy value must be >= 1, got {self.value}")
        if self.cap_basis not in ("total", "synthetic"):
            raise ValueError(f"cap_basis must be 'total' or 'synthetic', got {self.cap_basis!r}")

    @classmethod
    def parse(cls, spec: str, cap_basis: str = "total") -> "Strategy":
        """``x8`` -> times_k(8); ``cap:500`` -> cap(500)."""
        spec = spec.strip().lower()
        m = re.fullmatch(r"[x×](\d+)", spec)
        if m:
            return cls("times_k", int(m.group(1)), cap_basis)
        m = re.fullmatch(r"cap[:=](\d+)", spec)
        if m:
            return cls("cap", int(m.group(1)), cap_basis)
        raise ValueError(f"cannot parse strategy {spec!r}; use e.g. 'x2' or 'cap:500'")

    def __str__(self) -> str:
        return f"x{self.value}" if self.kind == "times_k" else f"cap:{self.value}"


@dataclass
class AugmentationPlan:
    strategy: Strategy
    per_class_synthetic_target: dict[int, int]

    def to_dict(self) -> dict:
        return {"strategy": str(self.strategy), "cap_basis": self.strategy.cap_basis,
                "per_class_synthetic_target": {str(k): v for k, v in self.per_class_synthetic_target.items()}}


def plan_augmentation(counts: dict[int, int], strategy: Strategy) -> AugmentationPlan:
    if set(counts) != set(LABELS) or any(c < 0 for c in counts.values()):
        raise ValueError("counts must map every label 0..8 to a non-negative integer")
    targets = {}
    for label, original in counts.items():
        if label == MAJORITY_LABEL:
            targets[label] = 0
        elif strategy.kind == "times_k":
            targets[label] = (strategy.value - 1) * original
        elif strategy.cap_basis == "total":
            targets[label] = max(0, strategy.value - original)
        else:
            targets[label] = strategy.value
    return AugmentationPlan(strategy, targets)


# ---------------------------------------------------------------------------
# prompts

def build_generation_prompt(stressor: StressorRecord, history: str, definition: DefenseDefinition,
                            template: str = GENERATION_TEMPLATE) -> str:
    if len(definition.exemplars) < 3:
        raise ValueError(f"{definition.mechanism_name}: need at least 3 exemplars, "
                         f"got {len(definition.exemplars)}")
    ex = definition.exemplars
    return template.format_map({
        "stressor": stressor.category if not stressor.description
        else f"{stressor.category} - {stressor.description}",
        "history": history,
        "mechanism_name": definition.mechanism_name,
        "level": definition.level,
        "definition": definition.definition,
        "pattern_description": definition.pattern_description,
        "example_1": ex[0],
        "example_2": ex[1],
        "example_3": ex[2],
    })


_FENCE_RE = re.compile(r"^\s*```[\w-]*\s*$")
_NUMBERING_RE = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+")
_QUOTES = "\"'“”‘’`"


def parse_generation_reply(reply: str) -> str:
    """First non-empty utterance line with fences, numbering and wrapping quotes removed."""
    for line in reply.splitlines():
        if _FENCE_RE.match(line):
            continue
        line = _NUMBERING_RE.sub("", line.strip()).strip()
        while len(line) >= 2 and line[0] in _QUOTES and line[-1] in _QUOTES:
            line = line[1:-1].strip()
        if line:
            return line
    raise GenerationParseError(f"no utterance in reply {reply[:80]!r}")


# ---------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class SeedInstance:
    """Grounding for one generation call: a real seeker turn's stressor and preceding history."""

    dialogue_id: str
    turn_index: int
    history: str
    stressor: StressorRecord


@dataclass
class SyntheticSample:
    text: str
    intended_label: int
    stressor: StressorRecord
    source_dialogue_id: str
    round: int
    mechanism_name: str = ""
    qc: Optional[dict] = None
    id: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("synthetic text must be non-empty")
        if self.intended_label == MAJORITY_LABEL or self.intended_label not in LABELS:
            raise ValueError(f"invalid intended label {self.intended_label}")

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "intended_label": self.intended_label,
                "stressor": self.stressor.to_dict(), "source_dialogue_id": self.source_dialogue_id,
                "round": self.round, "mechanism_name": self.mechanism_name, "qc": self.qc}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSample":
        return cls(d["text"], int(d["intended_label"]), StressorRecord.from_dict(d["stressor"]),
                   d["source_dialogue_id"], int(d["round"]), d.get("mechanism_name", ""),
                   d.get("qc"), d.get("id", ""))


def seed_instances(dialogues: Sequence[Dialogue], stressors: dict[tuple[str, int], StressorRecord],
                   history_turns: int = HISTORY_TURNS) -> list[SeedInstance]:
    """One seed per seeker turn that has a stressor, across all classes."""
    out = []
    for d in dialogues:
        for t in d.seeker_turns():
            rec = stressors.get((d.id, t.index))
            if rec is None:
                continue
            out.append(SeedInstance(d.id, t.index, render_history(d.turns[:t.index + 1], history_turns), rec))
    return out


@dataclass
class GenerationStats:
    calls: int = 0
    parse_failures: int = 0
    failed_replies: list[str] = field(default_factory=list)


def generate_class_batch(label: int, target_count: int, seeds: Sequence[SeedInstance],
                         catalog: DmrsCatalog, supplementary: dict[int, DefenseDefinition], gateway,
                         params: GenerationParams = GenerationParams(), *, budget_factor: float = 1.5,
                         round_size: int = 50, max_workers: int = 1,
                         stats: Optional[GenerationStats] = None) -> list[SyntheticSample]:
    """Generate exactly ``target_count`` samples for ``label`` or raise GenerationShortfall.

    Call ``i`` uses seed instance ``i mod len(seeds)``, mechanism ``i mod n_mechanisms`` of the
    label's level and generator seed ``params.seed + i``; results are therefore independent of
    ``max_workers``.
    """
    if target_count < 0:
        raise ValueError("target_count must be >= 0")
    stats = stats if stats is not None else GenerationStats()
    if target_count == 0:
        return []
    if not seeds:
        raise ValueError("no seed instances to ground generation")
    definitions = definitions_for_label(label, catalog, supplementary)
    budget = math.ceil(budget_factor * target_count)
    base_seed = params.seed or 0

    def one_call(i: int):
        seed = seeds[i % len(seeds)]
        definition = definitions[i % len(definitions)]
        prompt = build_generation_prompt(seed.stressor, seed.history, definition)
        reply = gateway.complete(prompt, GenerationParams(params.max_tokens, params.temperature, base_seed + i))
        try:
            return seed, definition, parse_generation_reply(reply), reply
        except GenerationParseError:
            return seed, definition, None, reply

    samples: list[SyntheticSample] = []
    next_call = 0
    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        while len(samples) < target_count and next_call < budget:
            wave = range(next_call, min(budget, next_call + target_count - len(samples)))
            next_call = wave.stop
            results = pool.map(one_call, wave) if pool else map(one_call, wave)
            for i, (seed, definition, text, reply) in zip(wave, results):
                stats.calls += 1
                if text is None:
                    stats.parse_failures += 1
                    stats.failed_replies.append(reply)
                    continue
                if len(samples) < target_count:
                    n = len(samples)
                    samples.append(SyntheticSample(
                        text=text, intended_label=label, stressor=seed.stressor,
                        source_dialogue_id=seed.dialogue_id, round=n // round_size,
                        mechanism_name=definition.mechanism_name, id=f"syn-{label}-{n:05d}"))
    finally:
        if pool:
            pool.shutdown()
    if len(samples) < target_count:
        raise GenerationShortfall(label, samples, target_count, stats.calls)
    return samples
