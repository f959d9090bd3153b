import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import hydro_grid, hydro_paragraph, state
from procstate.core import (
    K,
    NO_CHANGE,
    NONEXISTENT,
    UNKNOWN,
    ActionSequence,
    Entity,
    EntityState,
    Grid,
    Kind,
    Location,
    Paragraph,
    Sentence,
    StateChange,
    StepAction,
    apply,
    diff,
    grid_from_sequence,
    normalize,
    sequence_from_grid,
)
from procstate.errors import IllegalTransition

# small location alphabet so equal locations (and hence normalization) occur often
locations = st.sampled_from([UNKNOWN, Location("soil"), Location("turbine"), Location("root")])
states = st.one_of(st.just(NONEXISTENT), locations.map(EntityState))


def legal_change(draw, s: EntityState) -> StateChange:
    if s.exists:
        kind = draw(st.sampled_from([Kind.MOVE, Kind.DESTROY, Kind.NONE]))
        if kind == Kind.MOVE:
            return StateChange.move(s.location, draw(locations))
        if kind == Kind.DESTROY:
            return StateChange.destroy(s.location)
        return NO_CHANGE
    kind = draw(st.sampled_from([Kind.CREATE, Kind.NONE]))
    return StateChange.create(draw(locations)) if kind == Kind.CREATE else NO_CHANGE


@st.composite
def legal_sequences(draw):
    n_e = draw(st.integers(1, 4))
    n_t = draw(st.integers(1, 6))
    row = tuple(draw(states) for _ in range(n_e))
    initial = row
    steps = []
    for _ in range(n_t):
        changes = tuple(normalize(s, legal_change(draw, s)) for s in row)
        steps.append(StepAction(changes))
        row = tuple(apply(s, c) for s, c in zip(row, changes))
    return initial, ActionSequence(tuple(steps))


def test_apply_create_on_nonexistent():
    assert apply(NONEXISTENT, StateChange.create(Location("turbine"))) == EntityState.at("turbine")


def test_apply_nochange_is_identity():
    s = EntityState.at()
    assert apply(s, NO_CHANGE) == s


@pytest.mark.parametrize("before, change", [
    (NONEXISTENT, StateChange.move(UNKNOWN, Location("soil"))),
    (NONEXISTENT, StateChange.destroy(UNKNOWN)),
    (EntityState.at("soil"), StateChange.create(Location("soil"))),
])
def test_apply_rejects_illegal_transitions(before, change):
    with pytest.raises(IllegalTransition):
        apply(before, change)


def test_diff_examples():
    assert diff(EntityState.at(), EntityState.at("turbine")) == StateChange.move(UNKNOWN, Location("turbine"))
    assert apply(EntityState.at(), diff(EntityState.at(), EntityState.at("turbine"))) == EntityState.at("turbine")
    assert diff(EntityState.at("soil"), EntityState.at("soil")) == NO_CHANGE
    assert diff(EntityState.at("generator"), NONEXISTENT) == StateChange.destroy(Location("generator"))


def test_change_slot_invariants():
    with pytest.raises(ValueError):
        StateChange(Kind.MOVE, before=UNKNOWN)
    with pytest.raises(ValueError):
        StateChange(Kind.CREATE, before=UNKNOWN, after=UNKNOWN)
    with pytest.raises(ValueError):
        StateChange(Kind.NONE, after=UNKNOWN)
    assert len(Kind) == K == 4


def test_move_in_place_normalizes_to_nochange():
    s = EntityState.at("soil")
    assert normalize(s, StateChange.move(Location("soil"), Location("soil"))) == NO_CHANGE


@given(states, states)
def test_diff_is_total_and_inverts_apply(a, b):
    assert apply(a, diff(a, b)) == b


@given(st.data())
def test_diff_apply_inversion_up_to_normalization(data):
    s = data.draw(states)
    c = legal_change(data.draw, s)
    got = diff(s, apply(s, c))
    if c.kind == Kind.MOVE and c.before == c.after:
        assert got == NO_CHANGE
    else:
        assert got == c


def test_grid_from_sequence_all_nochange():
    g = grid_from_sequence((NONEXISTENT, NONEXISTENT), ActionSequence(((NO_CHANGE, NO_CHANGE),)))
    assert g.rows == ((NONEXISTENT, NONEXISTENT),) * 2


def test_hydro_grid_replay():
    """Replaying the diffs of the hydroelectricity grid reproduces it; water ends at the turbine."""
    g = hydro_grid()
    seq = sequence_from_grid(g)
    assert seq[1][0] == StateChange.move(UNKNOWN, Location("turbine"))
    assert all(c == NO_CHANGE for t in (0, 2) for c in seq[t])
    assert seq[3][3] == StateChange.create(Location("generator"))
    replay = grid_from_sequence(g.rows[0], seq)
    assert replay == g
    assert replay.rows[-1][0] == EntityState.at("turbine")


def test_grid_from_sequence_reports_coordinates():
    seq = ActionSequence(((NO_CHANGE,), (StateChange.destroy(UNKNOWN),)))
    with pytest.raises(IllegalTransition) as err:
        grid_from_sequence((NONEXISTENT,), seq)
    assert (err.value.step, err.value.entity) == (2, 0)


def test_sequence_from_constant_grid_is_all_nochange():
    g = Grid(((state("a"), state("-")),) * 4)
    assert all(c == NO_CHANGE for step in sequence_from_grid(g) for c in step)


@settings(max_examples=1000, deadline=None)
@given(legal_sequences())
def test_sequence_grid_round_trip(case):
    initial, seq = case
    g = grid_from_sequence(initial, seq)
    assert sequence_from_grid(g) == seq
    assert grid_from_sequence(g.rows[0], sequence_from_grid(g)) == g


def test_paragraph_invariants():
    p = hydro_paragraph()
    assert (p.n_steps, p.n_entities) == (4, 4)
    assert p.sentences[1].text.split() == list(p.sentences[1].tokens)
    with pytest.raises(ValueError):
        Paragraph.build("x", "t", ["a b"], ["a", "a"])
    with pytest.raises(ValueError):
        Paragraph.build("x", "t", [], ["a"])
    with pytest.raises(ValueError):
        Paragraph("x", "t", (Sentence(2, "a"),), (Entity("a"),))


def test_entity_id_is_a_mention():
    e = Entity("leaf", ("leaves",))
    assert set(e.mentions) == {"leaf", "leaves"}
    with pytest.raises(ValueError):
        Location("  ")
