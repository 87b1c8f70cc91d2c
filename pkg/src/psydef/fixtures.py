"""Synthetic desk-scale corpus for demos and tests. Not real support conversations."""

from __future__ import annotations

import random
from typing import Optional

from .catalog import DmrsCatalog, load_dmrs_catalog, load_supplementary_definitions
from .corpus import Dialogue, Turn

# roughly the skew of the real development split: level 7 dominant, level 8 rare
LABEL_WEIGHTS = {0: 0.14, 1: 0.06, 2: 0.05, 3: 0.08, 4: 0.06, 5: 0.04, 6: 0.08, 7: 0.45, 8: 0.04}

SUPPORTER_LINES = (
    "I'm sorry to hear that. Can you tell me more?",
    "That sounds really hard. How are you coping?",
    "It makes sense that you feel this way.",
    "What happened after that?",
    "Have you been able to talk to anyone about it?",
    "Thank you for sharing that with me.",
    "How long have you been feeling like this?",
    "What would help you most right now?",
)
OPENERS = ("", "", "Honestly ", "Well, ", "I guess ", "You know, ")


def _utterance(label: int, rng: random.Random, catalog: DmrsCatalog, supplementary) -> str:
    if 1 <= label <= 7:
        mech = rng.choice(catalog.mechanisms_for_level(label))
        ex = rng.choice(mech.exemplars)
    else:
        ex = rng.choice(supplementary[label].exemplars)
    opener = rng.choice(OPENERS)
    if opener and not ex.startswith("I"):
        ex = ex[0].lower() + ex[1:]
    return opener + ex


def make_fixture_corpus(n_dialogues: int = 20, seed: int = 0, *, catalog: Optional[DmrsCatalog] = None,
                        supplementary=None, min_turns: int = 8, max_turns: int = 16,
                        with_latency: bool = True) -> list[Dialogue]:
    catalog = catalog or load_dmrs_catalog()
    supplementary = supplementary or load_supplementary_definitions()
    rng = random.Random(seed)
    labels, weights = zip(*LABEL_WEIGHTS.items())
    dialogues = []
    for d in range(n_dialogues):
        n_turns = rng.randint(min_turns, max_turns)
        turns = []
        for i in range(n_turns):
            if i % 2 == 0:
                label = rng.choices(labels, weights)[0]
                rt = round(rng.lognormvariate(2.0, 0.9 if label == 0 else 0.4), 2) if with_latency else None
                turns.append(Turn(i, "seeker", _utterance(label, rng, catalog, supplementary), label, rt))
            else:
                turns.append(Turn(i, "supporter", rng.choice(SUPPORTER_LINES)))
        dialogues.append(Dialogue(f"fx_{d:03d}", turns))
    return dialogues


FIXTURE_CONFIG = """\
paths:
  corpus: corpus.jsonl
  output_root: run
backends:
  kind: stub
  seed: 0
split:
  train: 0.8
  dev: 0.2
  seed: 0
augmentation:
  strategy: x2
  round_size: 20
qc:
  kappa_threshold: 0.6
  min_batch: 20
fusion:
  max_epochs: 20
  patience: 5
"""
