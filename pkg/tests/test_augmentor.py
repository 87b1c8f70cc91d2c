import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psydef.augmentor import (
    GENERATION_TEMPLATE, MAJORITY_LABEL, GenerationParseError, GenerationShortfall, GenerationStats, Strategy,
    SyntheticSample, build_generation_prompt, generate_class_batch, parse_generation_reply, plan_augmentation,
    seed_instances,
)
from psydef.backends import GenerationParams, StubLLM
from psydef.catalog import DefenseDefinition
from psydef.corpus import LABELS
from psydef.stressor import StressorRecord

from conftest import make_dialogue

STRESSOR = StressorRecord("Job Loss", "The seeker was laid off.", "d0", 0)


def definition(n_ex=3):
    return DefenseDefinition(5, "Intellectualization", "Uses abstract thinking to avoid feelings.",
                             "Talks about the problem in general, detached terms.",
                             tuple(f"example number {i}" for i in range(n_ex)), "Neurotic")


def test_strategy_parsing():
    assert Strategy.parse("x8") == Strategy("times_k", 8)
    assert Strategy.parse("cap:500", "synthetic") == Strategy("cap", 500, "synthetic")
    for bad in ("x0", "cap:0", "double", "cap:-3"):
        with pytest.raises(ValueError):
            Strategy.parse(bad)


def test_times_2_doubles_label_1():
    counts = dict.fromkeys(LABELS, 0) | {1: 50}
    assert plan_augmentation(counts, Strategy.parse("x2")).per_class_synthetic_target[1] == 50


def test_cap_excludes_label_7_and_fills_label_8():
    counts = dict.fromkeys(LABELS, 10) | {7: 968, 8: 28}
    plan = plan_augmentation(counts, Strategy.parse("cap:500"))
    assert plan.per_class_synthetic_target[7] == 0
    assert plan.per_class_synthetic_target[8] == 472


def test_cap_on_synthetic_basis():
    counts = dict.fromkeys(LABELS, 10) | {7: 968, 8: 28}
    plan = plan_augmentation(counts, Strategy.parse("cap:500", "synthetic"))
    assert plan.per_class_synthetic_target[8] == 500 and plan.per_class_synthetic_target[7] == 0


def test_plan_rejects_incomplete_counts():
    with pytest.raises(ValueError):
        plan_augmentation({0: 1}, Strategy.parse("x2"))


_counts = st.fixed_dictionaries({k: st.integers(0, 2000) for k in LABELS})


@settings(max_examples=200, deadline=None)
@given(_counts, st.integers(1, 12), st.integers(1, 1000))
def test_plan_invariants(counts, k, n):
    tk = plan_augmentation(counts, Strategy("times_k", k)).per_class_synthetic_target
    cp = plan_augmentation(counts, Strategy("cap", n)).per_class_synthetic_target
    assert tk[MAJORITY_LABEL] == 0 and cp[MAJORITY_LABEL] == 0
    for label in LABELS:
        assert tk[label] >= 0 and cp[label] >= 0
        if label == MAJORITY_LABEL:
            continue
        assert counts[label] + tk[label] == k * counts[label]
        assert counts[label] + cp[label] <= max(n, counts[label])


def test_prompt_has_header_name_and_numbered_exemplars():
    p = build_generation_prompt(STRESSOR, "Seeker: hi", definition())
    assert "### DEFENSE TO SIMULATE:" in p
    assert "Intellectualization" in p
    for i in range(3):
        assert f'{i + 1}. "example number {i}"' in p
    assert "Job Loss - The seeker was laid off." in p


def test_prompt_needs_three_exemplars():
    with pytest.raises(ValueError):
        build_generation_prompt(STRESSOR, "", definition(2))


def test_template_slots():
    import string
    slots = {f for _, f, _, _ in string.Formatter().parse(GENERATION_TEMPLATE) if f}
    assert slots == {"stressor", "history", "mechanism_name", "level", "definition", "pattern_description",
                     "example_1", "example_2", "example_3"}


@pytest.mark.parametrize("reply, expected", [
    ('"I\'m fine, really."', "I'm fine, really."),
    ("```\nIt doesn't matter anyway.\n```", "It doesn't matter anyway."),
    ("1. \"Whatever, it's their problem.\"\n2. \"Another\"", "Whatever, it's their problem."),
    ("  \n- “I guess I just got unlucky.”  ", "I guess I just got unlucky."),
])
def test_parse_reply(reply, expected):
    assert parse_generation_reply(reply) == expected


@pytest.mark.parametrize("reply", ["", "   \n\t", "```\n```", '""'])
def test_parse_reply_failure(reply):
    with pytest.raises(GenerationParseError):
        parse_generation_reply(reply)


def test_sample_invariants():
    with pytest.raises(ValueError):
        SyntheticSample("text", 7, STRESSOR, "d0", 0)
    with pytest.raises(ValueError):
        SyntheticSample("", 3, STRESSOR, "d0", 0)
    s = SyntheticSample("text", 3, STRESSOR, "d0", 1, "Denial", {"kappa": 0.7}, "syn-3-00000")
    assert SyntheticSample.from_dict(s.to_dict()) == s


@pytest.fixture
def seeds():
    ds = [make_dialogue(f"d{i}", [7, 0, 3]) for i in range(3)]
    stressors = {(d.id, t.index): StressorRecord("Job Loss", "laid off", d.id, t.index)
                 for d in ds for t in d.seeker_turns()}
    return seed_instances(ds, stressors)


def test_seed_history_includes_the_seed_turn(seeds):
    assert len(seeds) == 9
    assert seeds[0].history == "Seeker: seeker turn 0 of d0"


def test_target_zero_makes_no_calls(seeds, catalog, supplementary):
    llm = StubLLM()
    assert generate_class_batch(3, 0, seeds, catalog, supplementary, llm) == []
    assert llm.calls == 0


def test_target_ten_labels_and_lineage(seeds, catalog, supplementary):
    out = generate_class_batch(2, 10, seeds, catalog, supplementary, StubLLM(), round_size=4)
    assert len(out) == 10
    assert all(s.intended_label == 2 and s.stressor.category == "Job Loss" for s in out)
    assert [s.round for s in out] == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
    assert {s.mechanism_name for s in out} == {m.name for m in catalog.mechanisms_for_level(2)}
    assert len({s.id for s in out}) == 10


def test_flaky_generator_meets_target_or_reports_shortfall(seeds, catalog, supplementary):
    llm = StubLLM(garbage_rate=0.2)
    stats = GenerationStats()
    try:
        out = generate_class_batch(8, 10, seeds, catalog, supplementary, llm, GenerationParams(seed=11),
                                   budget_factor=1.5, stats=stats)
        assert len(out) == 10
    except GenerationShortfall as exc:
        assert exc.target == 10 and len(exc.samples) < 10
    assert llm.calls <= 15 and stats.calls == llm.calls


def test_all_garbage_is_a_shortfall(seeds, catalog, supplementary):
    llm = StubLLM(garbage_rate=1.0)
    with pytest.raises(GenerationShortfall) as exc:
        generate_class_batch(0, 4, seeds, catalog, supplementary, llm, budget_factor=1.5)
    assert exc.value.calls == 6 and exc.value.samples == []


def test_parallel_generation_matches_serial(seeds, catalog, supplementary):
    serial = generate_class_batch(4, 12, seeds, catalog, supplementary, StubLLM(garbage_rate=0.1),
                                  GenerationParams(seed=5), max_workers=1)
    parallel = generate_class_batch(4, 12, seeds, catalog, supplementary, StubLLM(garbage_rate=0.1),
                                    GenerationParams(seed=5), max_workers=4)
    assert [s.to_dict() for s in serial] == [s.to_dict() for s in parallel]
