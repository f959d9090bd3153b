"""Hard constraints: the allowable() predicate as six toggleable rules.

CS-1  an entity must exist before it can be moved or destroyed
CS-2  an entity cannot be created if it already exists
CS-3  an entity cannot change before its first mention
D-1   existence toggles per entity <= max_toggles
D-2   entities changed in one sentence <= ceil(frac * |E|)
D-3   sentences in which one entity changes <= ceil(frac * T)

Existence evolves by change kind alone (create/move -> exists, destroy ->
gone), whatever rules are enabled, so each rule's verdict is independent of
the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

from .core import ActionSequence, EntityState, Kind, Paragraph, StepAction, tokenize

RULES = ("CS-1", "CS-2", "CS-3", "D-1", "D-2", "D-3")


@dataclass(frozen=True)
class HardConstraintConfig:
    enable_cs1: bool = True
    enable_cs2: bool = True
    enable_cs3: bool = True
    enable_d1: bool = True
    enable_d2: bool = True
    enable_d3: bool = True
    max_toggles: int = 1
    max_entities_changed_per_sentence: float = 0.5
    max_sentences_changed_per_entity: float = 0.5

    def __post_init__(self):
        if self.max_toggles < 0 or int(self.max_toggles) != self.max_toggles:
            raise ValueError("max_toggles must be a non-negative integer")
        for name in ("max_entities_changed_per_sentence", "max_sentences_changed_per_entity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def disabled(cls) -> "HardConstraintConfig":
        return cls(False, False, False, False, False, False)

    def only(self, *rules: str) -> "HardConstraintConfig":
        """Copy with exactly ``rules`` enabled."""
        return replace(self, **{_FLAG[r]: (r in rules) for r in RULES})

    def enabled(self, rule: str) -> bool:
        return getattr(self, _FLAG[rule])

    @property
    def any_enabled(self) -> bool:
        return any(self.enabled(r) for r in RULES)

    def entity_cap(self, n_entities: int) -> int:
        return _frac_ceil(self.max_entities_changed_per_sentence, n_entities)

    def sentence_cap(self, n_sentences: int) -> int:
        return _frac_ceil(self.max_sentences_changed_per_entity, n_sentences)


_FLAG = {r: "enable_" + r.replace("-", "").lower() for r in RULES}


def _frac_ceil(frac: float, n: int) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004
    return math.ceil(frac * n - 1e-9)


@dataclass(frozen=True)
class MentionIndex:
    """1-based first-mention sentence per entity (None when never mentioned)."""

    first_mention: tuple[Optional[int], ...]
    n_sentences: int


class Violation(NamedTuple):
    rule: str
    step: int
    entity: str
    message: str


def _contains(tokens: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    return any(tuple(tokens[i:i + n]) == tuple(needle) for i in range(len(tokens) - n + 1))


def mention_positions(tokens: Sequence[str], mentions: Sequence[str]) -> list[tuple[int, int]]:
    """(start, end) token offsets of every case-insensitive mention occurrence."""
    lower = [t.lower() for t in tokens]
    found = []
    for m in mentions:
        needle = [t.lower() for t in tokenize(m)]
        n = len(needle)
        for i in range(len(lower) - n + 1):
            if n and lower[i:i + n] == needle:
                found.append((i, i + n))
    return sorted(set(found))


def build_mention_index(paragraph: Paragraph) -> MentionIndex:
    first = []
    for entity in paragraph.entities:
        needles = [[t.lower() for t in tokenize(m)] for m in entity.mentions]
        hit = None
        for sentence in paragraph.sentences:
            if any(_contains(sentence.lower_tokens, n) for n in needles):
                hit = sentence.index
                break
        first.append(hit)
    return MentionIndex(tuple(first), paragraph.n_steps)


class EntitySummary(NamedTuple):
    """Running per-entity facts needed to extend a prefix.

    ``pristine`` marks an entity that started nonexistent and has not flipped
    yet; its first creation is not counted as a toggle.
    """

    exists: bool
    toggles: int
    changes: int
    pristine: bool

    @classmethod
    def initial(cls, state: EntityState) -> "EntitySummary":
        return cls(state.exists, 0, 0, not state.exists)

    def advance(self, kind: Kind) -> "EntitySummary":
        if kind == Kind.NONE:
            return self
        exists = kind != Kind.DESTROY
        toggles, pristine = self.toggles, self.pristine
        if exists != self.exists:
            if not (pristine and exists):
                toggles += 1
            pristine = False
        return EntitySummary(exists, toggles, self.changes + 1, pristine)


Summary = tuple[EntitySummary, ...]


def initial_summary(initial: Sequence[EntityState]) -> Summary:
    return tuple(EntitySummary.initial(s) for s in initial)


def advance_summary(summary: Summary, kinds: Sequence[Kind]) -> Summary:
    return tuple(es.advance(Kind(k)) for es, k in zip(summary, kinds))


def entity_rule_failures(es: EntitySummary, kind: Kind, t: int, first_mention: Optional[int],
                         n_sentences: int, config: HardConstraintConfig) -> list[str]:
    """Per-entity rules (everything except D-2) violated by giving ``kind`` at step ``t``."""
    if kind == Kind.NONE:
        return []
    failed = []
    if config.enable_cs1 and kind in (Kind.MOVE, Kind.DESTROY) and not es.exists:
        failed.append("CS-1")
    if config.enable_cs2 and kind == Kind.CREATE and es.exists:
        failed.append("CS-2")
    if config.enable_cs3 and (first_mention is None or t < first_mention):
        failed.append("CS-3")
    nxt = es.advance(kind)
    if config.enable_d1 and nxt.toggles > config.max_toggles:
        failed.append("D-1")
    if config.enable_d3 and nxt.changes > config.sentence_cap(n_sentences):
        failed.append("D-3")
    return failed


def allowed_kinds(es: EntitySummary, t: int, first_mention: Optional[int], n_sentences: int,
                  config: HardConstraintConfig) -> list[Kind]:
    return [k for k in Kind
            if not entity_rule_failures(es, k, t, first_mention, n_sentences, config)]


def _kinds_of(step_action) -> tuple[Kind, ...]:
    if isinstance(step_action, StepAction):
        return step_action.kinds
    return tuple(Kind(k) for k in step_action)


def allowable_extension(node_summary: Summary, step_action, t: int, mentions: MentionIndex,
                        config: HardConstraintConfig) -> bool:
    """True iff appending ``step_action`` at 1-based step ``t`` breaks no enabled rule."""
    kinds = _kinds_of(step_action)
    if len(kinds) != len(node_summary):
        raise ValueError("step arity does not match the summary")
    if config.enable_d2:
        changed = sum(k != Kind.NONE for k in kinds)
        if changed > config.entity_cap(len(kinds)):
            return False
    for j, (es, k) in enumerate(zip(node_summary, kinds)):
        if entity_rule_failures(es, k, t, mentions.first_mention[j], mentions.n_sentences, config):
            return False
    return True


def audit_kinds(kind_rows: Sequence[Sequence[int]], initial_exists: Sequence[bool],
                first_mention: Sequence[Optional[int]], n_sentences: int,
                config: HardConstraintConfig,
                entity_ids: Optional[Sequence[str]] = None) -> list[Violation]:
    """Full-sequence audit over change kinds, written as a direct replay.

    Deliberately separate from the incremental :class:`EntitySummary`
    bookkeeping so the two can check each other.
    """
    n_ent = len(initial_exists)
    ids = list(entity_ids) if entity_ids is not None else [str(j) for j in range(n_ent)]
    ent_cap = config.entity_cap(n_ent)
    sent_cap = config.sentence_cap(n_sentences)
    out: list[Violation] = []
    for j in range(n_ent):
        exists = bool(initial_exists[j])
        flips = 0
        first_flip_was_creation = False
        changed = 0
        fm = first_mention[j]
        for t, row in enumerate(kind_rows, start=1):
            k = Kind(row[j])
            if k == Kind.NONE:
                continue
            changed += 1
            if config.enable_cs1 and k in (Kind.MOVE, Kind.DESTROY) and not exists:
                out.append(Violation("CS-1", t, ids[j], f"{k.name} of an entity that does not exist"))
            if config.enable_cs2 and k == Kind.CREATE and exists:
                out.append(Violation("CS-2", t, ids[j], "CREATE of an entity that already exists"))
            if config.enable_cs3 and (fm is None or t < fm):
                where = "never mentioned" if fm is None else f"first mentioned at step {fm}"
                out.append(Violation("CS-3", t, ids[j], f"{k.name} before mention ({where})"))
            now = k != Kind.DESTROY
            if now != exists:
                flips += 1
                if flips == 1:
                    first_flip_was_creation = now
            exists = now
            toggles = flips - (1 if first_flip_was_creation else 0)
            if config.enable_d1 and toggles > config.max_toggles:
                out.append(Violation("D-1", t, ids[j],
                                     f"{toggles} existence toggles exceed {config.max_toggles}"))
            if config.enable_d3 and changed > sent_cap:
                out.append(Violation("D-3", t, ids[j],
                                     f"changes in {changed} sentences exceed {sent_cap}"))
    if config.enable_d2:
        for t, row in enumerate(kind_rows, start=1):
            changed = [j for j in range(n_ent) if Kind(row[j]) != Kind.NONE]
            for j in changed[ent_cap:]:
                out.append(Violation("D-2", t, ids[j],
                                     f"{len(changed)} entities changed, cap {ent_cap}"))
    out.sort(key=lambda v: (v.step, RULES.index(v.rule), ids.index(v.entity)))
    return out


def violations(seq: ActionSequence, paragraph: Paragraph, initial: Sequence[EntityState],
               config: HardConstraintConfig,
               mentions: Optional[MentionIndex] = None) -> list[Violation]:
    if any(len(step) != paragraph.n_entities for step in seq.steps):
        raise ValueError("sequence arity does not match the paragraph")
    if mentions is None:
        mentions = build_mention_index(paragraph)
    return audit_kinds(seq.kinds, [s.exists for s in initial], mentions.first_mention,
                       paragraph.n_steps, config, paragraph.entity_ids)
