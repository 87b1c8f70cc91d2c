import csv
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import cohen_kappa_score

from psydef.augmentor import SyntheticSample
from psydef.backends import StubNLI
from psydef.catalog import DefenseDefinition
from psydef.quality import (
    KAPPA_THRESHOLD, QC_COLUMNS, TfidfAnnotator, adherence_hypothesis, cohens_kappa, kappa_gate, make_batches,
    passes_gate, self_bleu, semantic_adherence, write_qc_report,
)
from psydef.stressor import StressorRecord

STRESSOR = StressorRecord("Job Loss", "laid off", "d", 0)


def naive_self_bleu(texts, max_n=4):
    """Direct per-pair recomputation, no shared count tables."""
    toks = [t.lower().split() for t in texts]
    scores = []
    for i, hyp in enumerate(toks):
        refs = [r for j, r in enumerate(toks) if j != i]
        if not hyp:
            scores.append(1.0 if any(len(r) == 0 for r in refs) else 0.0)
            continue
        logs = []
        dead = False
        for n in range(1, max_n + 1):
            total = len(hyp) - n + 1
            if total <= 0:
                break
            grams = [tuple(hyp[k:k + n]) for k in range(total)]
            matched = 0
            for g in set(grams):
                best = max(sum(tuple(r[k:k + n]) == g for k in range(len(r) - n + 1)) for r in refs)
                matched += min(grams.count(g), best)
            if matched == 0 and n == 1:
                dead = True
                break
            logs.append(math.log(matched / total) if matched else math.log(1 / (total + 1)))
        if dead:
            scores.append(0.0)
            continue
        r_len = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        bp = 1.0 if len(hyp) > r_len else math.exp(1 - r_len / len(hyp))
        scores.append(bp * math.exp(sum(logs) / len(logs)))
    return sum(scores) / len(scores)


def random_corpus(rng, vocab=8):
    words = [f"w{i}" for i in range(vocab)]
    return [" ".join(rng.choices(words, k=rng.randint(1, 12))) for _ in range(rng.randint(2, 7))]


def test_self_bleu_identical_texts():
    assert self_bleu(["I am so tired of everything"] * 5) == pytest.approx(1.0, abs=1e-6)


def test_self_bleu_disjoint_pair():
    assert self_bleu(["alpha beta gamma delta", "one two three four"]) < 0.1


def test_self_bleu_matches_naive_oracle():
    rng = random.Random(0)
    for _ in range(40):
        texts = random_corpus(rng)
        assert self_bleu(texts) == pytest.approx(naive_self_bleu(texts), abs=1e-12)


def test_self_bleu_permutation_invariance():
    rng = random.Random(1)
    for _ in range(20):
        texts = random_corpus(rng)
        shuffled = texts[:]
        rng.shuffle(shuffled)
        assert self_bleu(shuffled) == pytest.approx(self_bleu(texts), abs=1e-12)


def test_self_bleu_edge_cases():
    with pytest.raises(ValueError):
        self_bleu(["only one"])
    assert self_bleu(["", ""]) == 1.0
    assert self_bleu(["", "x"]) == pytest.approx(0.5 * 0.0 + 0.5 * 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcde"), max_size=8).map(" ".join), min_size=2, max_size=6))
def test_self_bleu_in_unit_interval(texts):
    v = self_bleu(texts)
    assert 0.0 <= v <= 1.0 + 1e-12


@pytest.mark.parametrize("a, b, expected", [
    ([0, 1, 2, 0, 1, 2], [0, 1, 2, 0, 1, 2], 1.0),
    ([0, 1, 0, 1], [1, 0, 1, 0], -1.0),
    # p_o = 3/4, p_e = 1/2 -> 0.5
    ([0, 0, 1, 1], [0, 1, 1, 1], 0.5),
    ([0, 1, 2, 3], [5, 5, 5, 5], 0.0),
])
def test_kappa_hand_cases(a, b, expected):
    assert abs(cohens_kappa(a, b) - expected) <= 1e-12


def _exact_kappa(a, b):
    n = len(a)
    po = Fraction(sum(x == y for x, y in zip(a, b)), n)
    pe = sum(Fraction(a.count(k), n) * Fraction(b.count(k), n) for k in set(a) | set(b))
    return (po - pe) / (1 - pe)


def test_kappa_boundary_is_inclusive():
    # 2x2 table [[8, 2], [2, 8]] has kappa exactly 3/5
    a = [0] * 10 + [1] * 10
    b = [0] * 8 + [1] * 2 + [0] * 2 + [1] * 8
    assert _exact_kappa(a, b) == Fraction(3, 5)
    assert cohens_kappa(a, b) == 0.6
    assert passes_gate(cohens_kappa(a, b), KAPPA_THRESHOLD)


def test_kappa_0599_is_rejected():
    # symmetric table [[1599, 401], [401, 1599]]: p_e = 1/2, so kappa = 2 * 3198/4000 - 1 = 0.599
    a = [0] * 2000 + [1] * 2000
    b = [0] * 1599 + [1] * 401 + [0] * 401 + [1] * 1599
    assert _exact_kappa(a, b) == Fraction(599, 1000)
    k = cohens_kappa(a, b)
    assert k == 0.599
    assert not passes_gate(k, KAPPA_THRESHOLD)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=2, max_size=60))
def test_kappa_matches_sklearn(pairs):
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(a) | set(b)) == 1:
        assert cohens_kappa(a, b) == 1.0
        return
    assert cohens_kappa(a, b) == pytest.approx(cohen_kappa_score(a, b), abs=1e-9)


def test_kappa_errors():
    with pytest.raises(ValueError):
        cohens_kappa([1], [1, 2])
    with pytest.raises(ValueError):
        cohens_kappa([], [])


def samples(labels, round_=0):
    return [SyntheticSample(f"text number {i} label {lab}", lab, STRESSOR, "d", round_, f"Mech{lab}",
                            id=f"s{i}") for i, lab in enumerate(labels)]


def test_gate_identity_annotator_accepts():
    batch = samples([0, 1, 2, 3] * 5)
    by_text = {s.text: s.intended_label for s in batch}
    verdict, kept = kappa_gate(batch, by_text.__getitem__)
    assert verdict.kappa == 1.0 and verdict.accepted and kept == batch
    assert all(s.qc["kappa"] == 1.0 for s in batch)


def test_gate_constant_annotator_rejects():
    batch = samples([0, 1, 2, 3] * 5)
    verdict, kept = kappa_gate(batch, lambda t: 1)
    assert verdict.kappa == 0.0 and not verdict.accepted and kept == []
    assert all(s.qc["accepted"] is False for s in batch)


def test_gate_annotator_failure_is_unevaluable():
    def boom(text):
        raise RuntimeError("annotator down")

    batch = samples([0, 1] * 10)
    verdict, kept = kappa_gate(batch, boom)
    assert verdict.status == "unevaluable" and verdict.kappa is None
    assert not verdict.accepted and kept == []
    assert all(s.qc["status"] == "unevaluable" for s in batch)


def test_make_batches_merges_small_rounds():
    pool = samples([0] * 5) + [s for s in samples([1] * 30, 1)] + samples([2] * 8, 2)
    for i, s in enumerate(pool[5:35]):
        s.round = 1
    batches = make_batches(pool, 20)
    assert [len(b) for b in batches] == [43]
    pool2 = samples([0] * 25) + samples([1] * 25, 1)
    assert [len(b) for b in make_batches(pool2, 20)] == [25, 25]
    assert make_batches([], 20) == []


def test_semantic_adherence_uses_hypothesis():
    d = DefenseDefinition(3, "Denial", "refusing to acknowledge painful facts", "p", ("a", "b", "c"), "Disavowal")
    hyp = adherence_hypothesis(d)
    assert "Denial" in hyp and "refusing to acknowledge painful facts" in hyp
    nli = StubNLI()
    texts = ["I refuse to acknowledge these painful facts", "nice weather"]
    assert semantic_adherence(texts, d, nli) == pytest.approx(sum(nli.entail(t, hyp) for t in texts) / 2)
    with pytest.raises(ValueError):
        adherence_hypothesis(DefenseDefinition(3, "X", " ", "p", ("a", "b", "c")))


def test_tfidf_annotator_learns_real_turns():
    texts = ["I am so angry at them", "they always blame me", "everything is fine really",
             "it doesn't matter to me", "I am furious with them", "they ruin everything for me"] * 3
    labels = [1, 1, 3, 3, 1, 1] * 3
    ann = TfidfAnnotator(texts, labels)
    assert ann("I am angry") == 1
    assert ann("it is fine, it doesn't matter") == 3
    assert TfidfAnnotator(["x"], [4])("anything") == 4


def test_qc_report_has_table_columns(tmp_path):
    rows = [{"class": "Action", "label": 1, "N": 10, "SB": 0.4, "SA": 0.5},
            {"class": "Needs Info", "label": 8, "N": 3, "SB": 0.2, "SA": None}]
    verdict, _ = kappa_gate(samples([0, 1] * 10), lambda t: 0)
    paths = write_qc_report(tmp_path, rows, [verdict])
    with paths["table"].open() as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == QC_COLUMNS == ["class", "label", "N", "SB", "SA"]
    assert table[-1]["class"] == "Avg." and float(table[-1]["SB"]) == pytest.approx(0.3)
    assert "rejected" in paths["summary"].read_text()
