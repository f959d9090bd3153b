import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import hydro_paragraph
from procstate.constraints import (
    RULES,
    HardConstraintConfig,
    advance_summary,
    allowable_extension,
    build_mention_index,
    initial_summary,
    violations,
)
from procstate.core import (
    NO_CHANGE,
    NONEXISTENT,
    UNKNOWN,
    ActionSequence,
    EntityState,
    Kind,
    Location,
    Paragraph,
    StateChange,
)

M, C, D, N = Kind.MOVE, Kind.CREATE, Kind.DESTROY, Kind.NONE


def mentioned_everywhere(n_e: int, n_t: int) -> Paragraph:
    names = [f"e{j}" for j in range(n_e)]
    return Paragraph.build("p", "t", [" ".join(names)] * n_t, names)


def test_mention_index_hydro():
    """water is mentioned in sentence 1, the turbines first in sentence 2."""
    idx = build_mention_index(hydro_paragraph())
    assert idx.first_mention[:2] == (1, 2)
    assert idx.first_mention == (1, 2, 3, 4)


def test_mention_index_absent_and_case_insensitive():
    p = Paragraph.build("p", "t", ["The Moving Water falls .", "Nothing here ."],
                        [("water", "moving water"), "rock"])
    assert build_mention_index(p).first_mention == (1, None)


def test_mention_match_is_contiguous_token_sequence():
    p = Paragraph.build("p", "t", ["moving the water", "watering can"], [("mw", "moving water")])
    assert build_mention_index(p).first_mention == (None,)


def test_move_of_nonexistent_is_rejected():
    p = mentioned_everywhere(1, 2)
    summary = initial_summary([NONEXISTENT])
    assert not allowable_extension(summary, [M], 1, build_mention_index(p), HardConstraintConfig())
    assert allowable_extension(summary, [M], 1, build_mention_index(p), HardConstraintConfig.disabled())


def test_all_nochange_always_allowed():
    p = mentioned_everywhere(3, 4)
    idx = build_mention_index(p)
    summary = initial_summary([NONEXISTENT, EntityState.at(), EntityState.at("x")])
    strict = HardConstraintConfig(max_toggles=0, max_entities_changed_per_sentence=0.0,
                                  max_sentences_changed_per_entity=0.0)
    for t in range(1, 5):
        assert allowable_extension(summary, [N, N, N], t, idx, strict)


def test_recreation_exceeds_toggle_budget():
    """Create at 1, destroy at 2, create at 3: the first creation is free, then two flips > 1."""
    p = mentioned_everywhere(1, 3)
    idx = build_mention_index(p)
    cfg = HardConstraintConfig().only("D-1")
    s = initial_summary([NONEXISTENT])
    assert allowable_extension(s, [C], 1, idx, cfg)
    s = advance_summary(s, [C])
    assert allowable_extension(s, [D], 2, idx, cfg)
    s = advance_summary(s, [D])
    assert not allowable_extension(s, [C], 3, idx, cfg)
    seq = ActionSequence.from_kinds([[C], [D], [C]])
    assert [(v.rule, v.step) for v in violations(seq, p, [NONEXISTENT], cfg)] == [("D-1", 3)]


def test_self_move_on_nonexistent_entity():
    """A predicted move of a nonexistent entity from a place to itself is a CS-1 violation."""
    p = hydro_paragraph()
    initial = [EntityState.at(), EntityState.at("power plant"), EntityState.at("power plant"), NONEXISTENT]
    bad = StateChange.move(Location("generator"), Location("generator"))
    seq = ActionSequence([[NO_CHANGE] * 4] * 3 + [[NO_CHANGE, NO_CHANGE, NO_CHANGE, bad]])
    found = violations(seq, p, initial, HardConstraintConfig())
    assert ("CS-1", 4, "electricity") in [(v.rule, v.step, v.entity) for v in found]


def test_all_nochange_has_no_violations():
    p = hydro_paragraph()
    seq = ActionSequence.from_kinds([[N] * 4] * 4)
    assert violations(seq, p, [NONEXISTENT] * 4, HardConstraintConfig()) == []


def test_create_on_existing_electricity():
    p = Paragraph.build("p", "t", ["electricity flows", "electricity is made"], ["electricity"])
    seq = ActionSequence.from_kinds([[N], [C]])
    found = violations(seq, p, [EntityState.at()], HardConstraintConfig())
    assert [(v.rule, v.step, v.entity) for v in found] == [("CS-2", 2, "electricity")]


def test_cs3_before_first_mention():
    p = Paragraph.build("p", "t", ["nothing", "the rock"], ["rock"])
    seq = ActionSequence.from_kinds([[M], [N]])
    found = violations(seq, p, [EntityState.at()], HardConstraintConfig())
    assert [(v.rule, v.step) for v in found] == [("CS-3", 1)]


def test_d2_caps_changed_entities_per_sentence():
    """Four entities with fraction 0.5 allow two changes per sentence; the third is flagged."""
    p = mentioned_everywhere(4, 1)
    seq = ActionSequence.from_kinds([[M, M, M, N]])
    found = violations(seq, p, [EntityState.at()] * 4, HardConstraintConfig())
    assert [(v.rule, v.entity) for v in found] == [("D-2", "e2")]


def test_d3_caps_changed_sentences_per_entity():
    p = mentioned_everywhere(1, 4)
    seq = ActionSequence.from_kinds([[M], [M], [M], [N]])
    found = violations(seq, p, [EntityState.at()], HardConstraintConfig())
    assert [(v.rule, v.step) for v in found] == [("D-3", 3)]


def test_fraction_ceiling_never_forbids_single_change():
    cfg = HardConstraintConfig(max_entities_changed_per_sentence=0.1, max_sentences_changed_per_entity=0.1)
    assert cfg.entity_cap(1) == 1 and cfg.sentence_cap(3) == 1
    assert HardConstraintConfig(max_entities_changed_per_sentence=0.3).entity_cap(10) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        HardConstraintConfig(max_toggles=-1)
    with pytest.raises(ValueError):
        HardConstraintConfig(max_sentences_changed_per_entity=1.5)


@st.composite
def instances(draw):
    n_e = draw(st.integers(1, 3))
    n_t = draw(st.integers(1, 4))
    names = [f"e{j}" for j in range(n_e)]
    texts = [" ".join(n for n in names if draw(st.booleans())) or "nothing" for _ in range(n_t)]
    p = Paragraph.build("p", "t", texts, names)
    initial = [EntityState.at() if draw(st.booleans()) else NONEXISTENT for _ in names]
    rows = [[draw(st.sampled_from(list(Kind))) for _ in names] for _ in range(n_t)]
    flags = {f"enable_{r.replace('-', '').lower()}": draw(st.booleans()) for r in RULES}
    cfg = HardConstraintConfig(**flags, max_toggles=draw(st.integers(0, 2)),
                               max_entities_changed_per_sentence=draw(st.sampled_from([0.0, 0.3, 0.5, 1.0])),
                               max_sentences_changed_per_entity=draw(st.sampled_from([0.0, 0.3, 0.5, 1.0])))
    return p, initial, rows, cfg


def prefix_verdicts(p, initial, rows, cfg):
    idx = build_mention_index(p)
    s = initial_summary(initial)
    out = []
    for t, row in enumerate(rows, start=1):
        out.append(allowable_extension(s, row, t, idx, cfg))
        s = advance_summary(s, row)
    return out


@settings(max_examples=400, deadline=None)
@given(instances())
def test_audit_agrees_with_incremental_checks(case):
    """violations() is empty exactly when every prefix transition is accepted, and the first
    rejected transition is the first step carrying a violation."""
    p, initial, rows, cfg = case
    verdicts = prefix_verdicts(p, initial, rows, cfg)
    found = violations(ActionSequence.from_kinds(rows), p, initial, cfg)
    assert (found == []) == all(verdicts)
    if found:
        assert min(v.step for v in found) == verdicts.index(False) + 1


@settings(max_examples=300, deadline=None)
@given(instances())
def test_rule_independence(case):
    """Each rule's violations are the same whether or not the other rules are enabled."""
    p, initial, rows, cfg = case
    seq = ActionSequence.from_kinds(rows)
    everything = violations(seq, p, initial, cfg.only(*RULES))
    for rule in RULES:
        alone = violations(seq, p, initial, cfg.only(rule))
        assert alone == [v for v in everything if v.rule == rule]


@settings(max_examples=200, deadline=None)
@given(instances())
def test_disabled_rules_accept_everything(case):
    p, initial, rows, _ = case
    assert all(prefix_verdicts(p, initial, rows, HardConstraintConfig.disabled()))


def test_rejected_prefix_stays_rejected():
    """Exhaustive check on two entities, three steps: once a prefix is rejected every extension is."""
    p = Paragraph.build("p", "t", ["e0", "e0 e1", "e1"], ["e0", "e1"])
    initial = [EntityState.at(), NONEXISTENT]
    cfg = HardConstraintConfig()
    for rows in itertools.product(itertools.product(Kind, repeat=2), repeat=3):
        seq = ActionSequence.from_kinds(rows)
        for t in range(1, 3):
            head = violations(ActionSequence.from_kinds(rows[:t]), p, initial, cfg)
            if head:
                assert violations(seq, p, initial, cfg)


def test_unknown_location_entities_still_count_as_existing():
    p = mentioned_everywhere(1, 2)
    seq = ActionSequence(((StateChange.destroy(UNKNOWN),), (NO_CHANGE,)))
    assert violations(seq, p, [EntityState.at()], HardConstraintConfig()) == []
