from __future__ import annotations

import json

import pytest

from psydef.catalog import load_dmrs_catalog, load_supplementary_definitions
from psydef.corpus import Dialogue, Turn


@pytest.fixture(scope="session")
def catalog():
    return load_dmrs_catalog()


@pytest.fixture(scope="session")
def supplementary():
    return load_supplementary_definitions()


def make_dialogue(did: str, labels, texts=None) -> Dialogue:
    """Alternating seeker/supporter dialogue with one seeker turn per entry of ``labels``."""
    turns = []
    for k, label in enumerate(labels):
        text = texts[k] if texts else f"seeker turn {k} of {did}"
        turns.append(Turn(len(turns), "seeker", text, label))
        turns.append(Turn(len(turns), "supporter", "I hear you."))
    return Dialogue(did, turns)


def jsonl(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


TOY_WORDS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india")


def toy_rows(n_per_class: int, seed: int):
    """Linearly separable 9-class feature rows: class-shifted heuristics, profile and a class keyword."""
    import numpy as np

    from psydef.features import FeatureRow

    rng = np.random.default_rng(seed)
    rows = []
    for c in range(9):
        for i in range(n_per_class):
            heur = rng.uniform(0, 1, 7)
            heur[c % 7] += 2.0
            prof = rng.dirichlet(np.ones(30) * 5)
            prof[3 * c:3 * c + 3] += 0.3
            prof /= prof.sum()
            text = f"[Stressor:x|Turn:{TOY_WORDS[c]} {TOY_WORDS[c]} said {rng.integers(1000)}]"
            rows.append(FeatureRow(text, heur, prof, c, id=f"{c}-{i}"))
    return rows


# ---------------------------------------------------------------------------
# independent oracles shared by the unit tests and the acceptance suite

def brute_metrics(preds, golds, k=9):
    """Accuracy and macro P/R/F1 from per-class TP/FP/FN counted with plain loops."""
    prec, rec, f1 = [], [], []
    for c in range(k):
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    acc = sum(p == g for p, g in zip(preds, golds)) / len(golds)
    return acc, sum(prec) / k, sum(rec) / k, sum(f1) / k, f1


def brute_profile(scores, catalog):
    """Group-mean then L1-normalize, written as plain loops over the catalog records."""
    out = []
    for m in catalog.mechanisms:
        vals = [scores[j] for j, ind in enumerate(catalog.indicators) if ind.mechanism == m.id]
        out.append(sum(vals) / len(vals))
    total = sum(out)
    if total == 0:
        return [1 / len(out)] * len(out)
    return [v / total for v in out]


def brute_level(profile, catalog):
    sums = {}
    for p, m in zip(profile, catalog.mechanisms):
        sums[m.level] = sums.get(m.level, 0.0) + p
    best = max(sums.values())
    return min(lv for lv, v in sums.items() if v == best)


def finite_difference_check(model, inputs, params, n_probes=10, eps=1e-6, seed=0):
    """Max relative error between autograd and central differences on random coordinates of ``params``."""
    import numpy as np
    import torch
    from torch import nn

    rng = np.random.default_rng(seed)
    target = torch.tensor([0, 3, 8, 5])
    loss_fn = nn.CrossEntropyLoss(label_smoothing=0.1)

    def loss():
        return loss_fn(model(*inputs), target)

    model.zero_grad()
    loss().backward()
    errs = []
    for _ in range(n_probes):
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + eps
            up = loss().item()
            p[idx] = orig - eps
            down = loss().item()
            p[idx] = orig
        numeric = (up - down) / (2 * eps)
        errs.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return max(errs)


def frozen_double_model(seed=1):
    """Float64 fusion model with populated normalization statistics, in eval mode."""
    import torch

    from psydef.fusion import init_model

    model = init_model(seed=seed).double()
    model.train()
    with torch.no_grad():
        model(*fusion_batch(32, seed=5, dtype=torch.float64))
    return model.eval()


def fusion_batch(n=4, seed=0, dtype=None):
    import torch

    dtype = dtype or torch.float32
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(n, 768, generator=g, dtype=dtype), torch.rand(n, 7, generator=g, dtype=dtype),
            torch.softmax(torch.randn(n, 30, generator=g, dtype=dtype), -1))
