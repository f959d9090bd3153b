import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from procstate.core import Entity, Kind
from procstate.priors import (
    FrameRecord,
    PriorTable,
    Rule,
    build_priors,
    evidence,
    log_prior_matrix,
    logistic,
    match_rules,
    merge_tables,
    prior,
)

ABSORB = Rule("absorb", frozenset({"ARG0", "ARG1"}), "ARG1", Kind.MOVE)


def frame(verb, topic="photosynthesis", **args):
    return FrameRecord(topic, verb, tuple(args.items()))


def test_absorb_rule_moves_the_absorbed_entity():
    assert match_rules(frame("absorb", ARG0="roots", ARG1="water"), [ABSORB]) == [("water", Kind.MOVE)]


def test_unknown_verb_matches_nothing():
    assert match_rules(frame("sing", ARG0="bird"), [ABSORB]) == []


def test_missing_required_role_matches_nothing():
    assert match_rules(frame("absorb", ARG1="water"), [ABSORB]) == []


def test_two_rules_on_one_verb_both_fire():
    """'convert' moves nothing but destroys ARG1 and creates ARG2."""
    rules = [Rule("convert", frozenset({"ARG1"}), "ARG1", Kind.DESTROY),
             Rule("convert", frozenset({"ARG1", "ARG2"}), "ARG2", Kind.CREATE)]
    got = match_rules(frame("convert", ARG1="sugar", ARG2="energy"), rules)
    assert got == [("sugar", Kind.DESTROY), ("energy", Kind.CREATE)]


def test_rule_target_must_be_required():
    with pytest.raises(ValueError):
        Rule("absorb", frozenset({"ARG0"}), "ARG1", Kind.MOVE)
    with pytest.raises(ValueError):
        Rule("absorb", frozenset({"ARG1"}), "ARG1", Kind.NONE)


def test_empty_stream_gives_zero_evidence():
    table = build_priors([], [ABSORB])
    assert table.counts == {}
    assert evidence(table, Entity("water"), "photosynthesis", Kind.MOVE) == 0


def test_five_matching_frames_count_five():
    frames = [frame("absorb", ARG0="roots", ARG1="water")] * 5
    table = build_priors(frames, [ABSORB])
    assert table.counts == {("photosynthesis", "water", Kind.MOVE): 5}


def test_turbine_without_move_support():
    frames = [frame("absorb", topic="hydro", ARG0="plant", ARG1="water"),
              frame("spin", topic="hydro", ARG0="water", ARG1="turbine")]
    table = build_priors(frames, [ABSORB])
    assert evidence(table, Entity("turbine"), "hydro", Kind.MOVE) == 0


def test_head_lemma_is_last_token_lowercased():
    frames = [frame("absorb", ARG0="roots", ARG1="the Cold Water")]
    table = build_priors(frames, [ABSORB])
    assert table.count("photosynthesis", "water", Kind.MOVE) == 1


def test_mention_lemmas_take_the_max():
    table = PriorTable({("t", "leaf", Kind.MOVE): 2, ("t", "leaves", Kind.MOVE): 7})
    assert evidence(table, Entity("leaf", ("leaves",)), "t", Kind.MOVE) == 7


def test_malformed_frames_are_skipped_and_tallied():
    frames = [frame("absorb", ARG0="roots", ARG1="water"), None, ("t", "", ()), ("t", "absorb", [("", "x")])]
    table = build_priors(frames, [ABSORB])
    assert table.skipped == 3
    assert sum(table.counts.values()) == 1


def test_midpoint_is_exactly_half():
    for x0 in (0.0, 1.0, 3.0, 7.5):
        assert logistic(x0, x0) == 0.5


def test_zero_count_closed_form():
    table = PriorTable({}, x0=3.0)
    p = prior(table, Entity("generator"), "nuclear-powered electricity generation", Kind.MOVE)
    assert p == pytest.approx(1.0 / (1.0 + math.e ** 3), rel=1e-12)
    assert p == pytest.approx(0.0474, abs=1e-4)


def test_nochange_prior_is_flat():
    table = PriorTable({("t", "x", Kind.MOVE): 100}, none_prior=0.3)
    assert prior(table, Entity("x"), "t", Kind.NONE) == 0.3


def test_strictly_increasing_over_counts():
    ps = [logistic(x, 3.0) for x in range(11)]
    assert all(a < b for a, b in zip(ps, ps[1:]))


@given(st.floats(-1e6, 1e6), st.floats(-50, 50))
def test_prior_is_strictly_inside_unit_interval(x, x0):
    p = logistic(x, x0)
    assert 0.0 < p < 1.0
    assert math.isfinite(math.log(p))


@given(st.permutations(list(range(8))))
def test_build_is_order_independent(order):
    base = [frame("absorb", ARG0="roots", ARG1=w) for w in ("water", "water", "salt", "Water")]
    base += [frame("absorb", topic="Digestion", ARG0="gut", ARG1=w) for w in ("food", "water", "acid", "food")]
    shuffled = [base[i] for i in order]
    assert build_priors(shuffled, [ABSORB]) == build_priors(base, [ABSORB])


def test_sharded_build_merges_to_the_same_table():
    frames = [frame("absorb", ARG0="roots", ARG1=w) for w in ("water", "salt", "water", "air", "salt")]
    whole = build_priors(frames, [ABSORB])
    merged = merge_tables([build_priors(frames[:2], [ABSORB]), build_priors(frames[2:], [ABSORB])])
    assert merged == whole


def test_log_prior_matrix_layout():
    table = PriorTable({("t", "water", Kind.CREATE): 3}, x0=3.0, none_prior=0.25)
    mat = log_prior_matrix(table, [Entity("water"), Entity("salt")], "t")
    assert mat.shape == (2, 4)
    assert mat[0, Kind.CREATE] == math.log(0.5)
    assert mat[1, Kind.NONE] == math.log(0.25)
    np.testing.assert_allclose(mat[1, :3], math.log(logistic(0, 3.0)))


def test_topic_matching_ignores_case_and_spacing():
    table = build_priors([frame("absorb", topic="  Photosynthesis ", ARG0="a", ARG1="water")], [ABSORB])
    assert evidence(table, Entity("water"), "photosynthesis", Kind.MOVE) == 1
