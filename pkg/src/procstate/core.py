"""Domain model: paragraphs, entity states, state changes and the grid algebra.

An entity's state is either nonexistent or existing at a location, where the
location may be unknown ("?") or a text span. A paragraph with T sentences and
E entities is annotated as a (T+1) x E grid of states; consecutive rows differ
by exactly one state change per entity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Optional, Sequence

from .errors import IllegalTransition

_TOKEN_RE = re.compile(r"\w+(?:[-'’]\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Split text into word and punctuation tokens."""
    return _TOKEN_RE.findall(text)


class Kind(IntEnum):
    """The four state-change kinds, valued by their position on the logit axis."""

    MOVE = 0
    CREATE = 1
    DESTROY = 2
    NONE = 3

    @property
    def rank(self) -> int:
        # canonical tie-break order: NONE sorts first
        return _RANK[self]

    @property
    def token(self) -> str:
        return self.name

    @classmethod
    def from_token(cls, token: str) -> "Kind":
        return cls[token]


_RANK = {Kind.NONE: 0, Kind.MOVE: 1, Kind.CREATE: 2, Kind.DESTROY: 3}
KINDS = tuple(Kind)
K = len(KINDS)


class Slot(str, Enum):
    """Location parameter slots of the parameterized change kinds."""

    MOVE_BEFORE = "move.before"
    MOVE_AFTER = "move.after"
    CREATE_AFTER = "create.after"
    DESTROY_BEFORE = "destroy.before"


PARAM_SLOTS = {
    Kind.MOVE: (Slot.MOVE_BEFORE, Slot.MOVE_AFTER),
    Kind.CREATE: (Slot.CREATE_AFTER,),
    Kind.DESTROY: (Slot.DESTROY_BEFORE,),
    Kind.NONE: (),
}


@dataclass(frozen=True)
class Location:
    """A location: ``text=None`` is the unknown location "?"."""

    text: Optional[str] = None

    def __post_init__(self):
        if self.text is not None:
            norm = " ".join(self.text.split())
            if not norm:
                raise ValueError("span location text must be non-empty")
            object.__setattr__(self, "text", norm)

    @property
    def is_unknown(self) -> bool:
        return self.text is None

    @classmethod
    def span(cls, text: str) -> "Location":
        return cls(text)

    def __str__(self) -> str:
        return "?" if self.text is None else self.text

    def key(self) -> str:
        """Normalized comparison key (case-insensitive)."""
        return "?" if self.text is None else self.text.casefold()


UNKNOWN = Location()


@dataclass(frozen=True)
class EntityState:
    """Nonexistent when ``location`` is None, otherwise existing at ``location``."""

    location: Optional[Location] = None

    @property
    def exists(self) -> bool:
        return self.location is not None

    @classmethod
    def at(cls, location: Location | str | None = None) -> "EntityState":
        if location is None:
            location = UNKNOWN
        elif isinstance(location, str):
            location = Location(location)
        return cls(location)

    def __str__(self) -> str:
        return "-" if self.location is None else str(self.location)


NONEXISTENT = EntityState()


@dataclass(frozen=True)
class StateChange:
    kind: Kind
    before: Optional[Location] = None
    after: Optional[Location] = None

    def __post_init__(self):
        needs_before = self.kind in (Kind.MOVE, Kind.DESTROY)
        needs_after = self.kind in (Kind.MOVE, Kind.CREATE)
        if (self.before is not None) != needs_before:
            raise ValueError(f"{self.kind.name} {'requires' if needs_before else 'forbids'} a before location")
        if (self.after is not None) != needs_after:
            raise ValueError(f"{self.kind.name} {'requires' if needs_after else 'forbids'} an after location")

    @classmethod
    def move(cls, before: Location, after: Location) -> "StateChange":
        return cls(Kind.MOVE, before, after)

    @classmethod
    def create(cls, after: Location) -> "StateChange":
        return cls(Kind.CREATE, after=after)

    @classmethod
    def destroy(cls, before: Location) -> "StateChange":
        return cls(Kind.DESTROY, before=before)

    def param(self, slot: Slot) -> Optional[Location]:
        return self.before if slot in (Slot.MOVE_BEFORE, Slot.DESTROY_BEFORE) else self.after

    @classmethod
    def bare(cls, kind: Kind) -> "StateChange":
        """A change of ``kind`` with every parameter slot set to Unknown."""
        kind = Kind(kind)
        before = UNKNOWN if kind in (Kind.MOVE, Kind.DESTROY) else None
        after = UNKNOWN if kind in (Kind.MOVE, Kind.CREATE) else None
        return cls(kind, before, after)


NO_CHANGE = StateChange(Kind.NONE)


@dataclass(frozen=True)
class StepAction:
    """One state change per entity for a single sentence."""

    changes: tuple[StateChange, ...]

    def __post_init__(self):
        object.__setattr__(self, "changes", tuple(self.changes))

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(c.kind for c in self.changes)

    def __len__(self):
        return len(self.changes)

    def __iter__(self):
        return iter(self.changes)

    def __getitem__(self, j):
        return self.changes[j]


@dataclass(frozen=True)
class ActionSequence:
    steps: tuple[StepAction, ...]

    def __post_init__(self):
        steps = tuple(s if isinstance(s, StepAction) else StepAction(s) for s in self.steps)
        if len({len(s) for s in steps}) > 1:
            raise ValueError("every step must have the same entity arity")
        object.__setattr__(self, "steps", steps)

    @property
    def kinds(self) -> tuple[tuple[Kind, ...], ...]:
        return tuple(s.kinds for s in self.steps)

    @classmethod
    def from_kinds(cls, rows: Iterable[Sequence[int]]) -> "ActionSequence":
        return cls(tuple(StepAction(tuple(StateChange.bare(k) for k in row)) for row in rows))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, t):
        return self.steps[t]


@dataclass(frozen=True)
class Grid:
    """(T+1) x E entity states; row 0 is the state before the first sentence."""

    rows: tuple[tuple[EntityState, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        if not rows:
            raise ValueError("grid needs at least the initial row")
        if len({len(r) for r in rows}) != 1:
            raise ValueError("grid rows must all have the same length")
        object.__setattr__(self, "rows", rows)

    @property
    def n_steps(self) -> int:
        return len(self.rows) - 1

    @property
    def n_entities(self) -> int:
        return len(self.rows[0])

    def __getitem__(self, t):
        return self.rows[t]

    def __len__(self):
        return len(self.rows)

    def column(self, j: int) -> tuple[EntityState, ...]:
        return tuple(r[j] for r in self.rows)


@dataclass(frozen=True)
class Sentence:
    index: int
    text: str
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        tokens = tuple(self.tokens) if self.tokens else tuple(tokenize(self.text))
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "text", " ".join(tokens))
        if self.index < 1:
            raise ValueError("sentence index is 1-based")

    @property
    def lower_tokens(self) -> tuple[str, ...]:
        return tuple(t.lower() for t in self.tokens)


@dataclass(frozen=True)
class Entity:
    id: str
    mentions: tuple[str, ...] = ()

    def __post_init__(self):
        mentions = tuple(dict.fromkeys(m.strip() for m in (self.mentions or (self.id,))))
        if not self.id or any(not m for m in mentions):
            raise ValueError("entity id and mentions must be non-empty")
        if self.id not in mentions:
            mentions = (self.id,) + mentions
        object.__setattr__(self, "mentions", mentions)


@dataclass(frozen=True)
class Paragraph:
    id: str
    topic: str
    sentences: tuple[Sentence, ...]
    entities: tuple[Entity, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "entities", tuple(self.entities))
        if not self.sentences:
            raise ValueError(f"paragraph {self.id!r} has no sentences")
        if not self.entities:
            raise ValueError(f"paragraph {self.id!r} has no entities")
        for i, s in enumerate(self.sentences, start=1):
            if s.index != i:
                raise ValueError(f"sentence {i} carries index {s.index}")
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ValueError(f"paragraph {self.id!r} has duplicate entity ids")

    @classmethod
    def build(cls, id: str, topic: str, texts: Sequence[str],
              entities: Sequence[Entity | str | Sequence[str]]) -> "Paragraph":
        """Convenience constructor from raw sentence strings and entity specs."""
        sentences = tuple(Sentence(i, t) for i, t in enumerate(texts, start=1))
        ents = []
        for e in entities:
            if isinstance(e, Entity):
                ents.append(e)
            elif isinstance(e, str):
                ents.append(Entity(e, (e,)))
            else:
                e = tuple(e)
                ents.append(Entity(e[0], e))
        return cls(id, topic, sentences, tuple(ents))

    @property
    def n_steps(self) -> int:
        return len(self.sentences)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def entity_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entities)


def apply(state: EntityState, change: StateChange) -> EntityState:
    kind = change.kind
    if kind == Kind.NONE:
        return state
    if kind == Kind.CREATE:
        if state.exists:
            raise IllegalTransition("cannot create an entity that already exists")
        return EntityState(change.after)
    if not state.exists:
        raise IllegalTransition(f"cannot {kind.name.lower()} a nonexistent entity")
    if kind == Kind.DESTROY:
        return NONEXISTENT
    return EntityState(change.after)


def apply_lenient(state: EntityState, change: StateChange) -> EntityState:
    """Like :func:`apply` but never raises: the change kind decides existence.

    Used to materialize grids for sequences decoded with some hard rules off.
    """
    kind = change.kind
    if kind == Kind.NONE:
        return state
    if kind == Kind.DESTROY:
        return NONEXISTENT
    return EntityState(change.after if change.after is not None else UNKNOWN)


def diff(before: EntityState, after: EntityState) -> StateChange:
    if before == after:
        return NO_CHANGE
    if not before.exists:
        return StateChange.create(after.location)
    if not after.exists:
        return StateChange.destroy(before.location)
    return StateChange.move(before.location, after.location)


def normalize(state: EntityState, change: StateChange) -> StateChange:
    """Canonical form of ``change`` as seen from ``state`` (Move in place -> NONE)."""
    return diff(state, apply(state, change))


def grid_from_sequence(initial: Sequence[EntityState], seq: ActionSequence,
                       strict: bool = True) -> Grid:
    step_fn = apply if strict else apply_lenient
    row = tuple(initial)
    rows = [row]
    for t, step in enumerate(seq.steps, start=1):
        if len(step) != len(row):
            raise ValueError(f"step {t} has {len(step)} changes for {len(row)} entities")
        new = []
        for j, (state, change) in enumerate(zip(row, step.changes)):
            try:
                new.append(step_fn(state, change))
            except IllegalTransition as exc:
                raise IllegalTransition(str(exc), step=t, entity=j) from None
        row = tuple(new)
        rows.append(row)
    return Grid(tuple(rows))


def sequence_from_grid(grid: Grid) -> ActionSequence:
    steps = []
    for prev, cur in zip(grid.rows, grid.rows[1:]):
        steps.append(StepAction(tuple(diff(a, b) for a, b in zip(prev, cur))))
    return ActionSequence(tuple(steps))
