"""Soft-constraint priors P(change | entity, topic) from counted SRL frames.

Frames (verb + role-labelled arguments) are matched against a rulebase that
maps them to state changes of one argument; matches are counted per
(topic, entity head lemma, kind) and turned into a probability with a
logistic curve centred at ``x0``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .core import Entity, Kind, tokenize

CHANGE_KINDS = (Kind.MOVE, Kind.CREATE, Kind.DESTROY)

# keeps log P finite when x - x0 is far outside the float range of the logistic
_P_FLOOR = 1e-300
_P_CEIL = math.nextafter(1.0, 0.0)


class FrameRecord(NamedTuple):
    topic: str
    verb_lemma: str
    args: tuple[tuple[str, str], ...]

    def arg(self, role: str):
        for r, text in self.args:
            if r == role:
                return text
        return None


@dataclass(frozen=True)
class Rule:
    verb_lemma: str
    required_roles: frozenset[str]
    target_role: str
    change_kind: Kind

    def __post_init__(self):
        object.__setattr__(self, "required_roles", frozenset(self.required_roles))
        object.__setattr__(self, "change_kind", Kind(self.change_kind))
        if self.change_kind not in CHANGE_KINDS:
            raise ValueError("rules map frames to MOVE, CREATE or DESTROY only")
        if self.target_role not in self.required_roles:
            raise ValueError("target_role must be one of the required roles")
        if not self.verb_lemma:
            raise ValueError("rule verb_lemma must be non-empty")


def norm_topic(topic: str) -> str:
    return " ".join(topic.lower().split())


def head_lemma(text: str) -> str:
    """Lowercased last word token of ``text`` (no stemming)."""
    words = [t for t in tokenize(text) if any(c.isalnum() for c in t)]
    return words[-1].lower() if words else ""


@dataclass
class PriorTable:
    counts: dict[tuple[str, str, Kind], int] = field(default_factory=dict)
    x0: float = 3.0
    none_prior: float = 0.5
    skipped: int = 0

    def __post_init__(self):
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if not 0.0 < self.none_prior < 1.0:
            raise ValueError("none_prior must lie in (0, 1)")
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("counts must be non-negative")
        self.counts = {(t, l, Kind(k)): c for (t, l, k), c in self.counts.items()}

    def count(self, topic: str, lemma: str, kind: Kind) -> int:
        return self.counts.get((norm_topic(topic), lemma.lower(), Kind(kind)), 0)

    def with_params(self, x0: float | None = None, none_prior: float | None = None) -> "PriorTable":
        return PriorTable(dict(self.counts),
                          self.x0 if x0 is None else x0,
                          self.none_prior if none_prior is None else none_prior,
                          self.skipped)

    def __eq__(self, other):
        if not isinstance(other, PriorTable):
            return NotImplemented
        nonzero = lambda c: {k: v for k, v in c.items() if v}
        return (nonzero(self.counts) == nonzero(other.counts)
                and self.x0 == other.x0 and self.none_prior == other.none_prior)


def match_rules(frame: FrameRecord, rulebase: Iterable[Rule]) -> list[tuple[str, Kind]]:
    roles = {r for r, _ in frame.args}
    out = []
    for rule in rulebase:
        if rule.verb_lemma == frame.verb_lemma and rule.required_roles <= roles:
            out.append((frame.arg(rule.target_role), rule.change_kind))
    return out


def _well_formed(frame) -> bool:
    try:
        topic, verb, args = frame
        return (isinstance(topic, str) and isinstance(verb, str) and bool(verb)
                and all(isinstance(r, str) and r and isinstance(t, str) for r, t in args))
    except (TypeError, ValueError):
        return False


def build_priors(frames: Iterable[FrameRecord], rulebase: Iterable[Rule], x0: float = 3.0,
                 none_prior: float = 0.5) -> PriorTable:
    rulebase = list(rulebase)
    counts: Counter = Counter()
    skipped = 0
    for frame in frames:
        if not _well_formed(frame):
            skipped += 1
            continue
        frame = FrameRecord(frame[0], frame[1], tuple(tuple(a) for a in frame[2]))
        topic = norm_topic(frame.topic)
        for text, kind in match_rules(frame, rulebase):
            lemma = head_lemma(text)
            if lemma:
                counts[(topic, lemma, kind)] += 1
    return PriorTable(dict(counts), x0, none_prior, skipped)


def merge_tables(tables: Iterable[PriorTable]) -> PriorTable:
    """Sum counts of tables built from disjoint frame shards."""
    tables = list(tables)
    if not tables:
        return PriorTable()
    counts: Counter = Counter()
    for tab in tables:
        counts.update(tab.counts)
    first = tables[0]
    return PriorTable(dict(counts), first.x0, first.none_prior, sum(t.skipped for t in tables))


def logistic(x: float, x0: float) -> float:
    z = x - x0
    if z >= 0:
        p = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        p = e / (1.0 + e)
    return min(max(p, _P_FLOOR), _P_CEIL)


def evidence(table: PriorTable, entity: Entity, topic: str, kind: Kind) -> int:
    """x: the max count over the head lemmas of the entity's mentions."""
    lemmas = {head_lemma(m) for m in entity.mentions} - {""}
    return max((table.count(topic, lemma, kind) for lemma in lemmas), default=0)


def prior(table: PriorTable, entity: Entity, topic: str, kind: Kind) -> float:
    kind = Kind(kind)
    if kind == Kind.NONE:
        return table.none_prior
    return logistic(evidence(table, entity, topic, kind), table.x0)


def log_prior_matrix(table: PriorTable, entities: Iterable[Entity], topic: str):
    """|E| x K array of log P(kind | entity, topic), kinds on the logit axis order."""
    rows = [[math.log(prior(table, e, topic, k)) for k in Kind] for e in entities]
    return np.array(rows, dtype=float).reshape(-1, len(Kind))


def count_items(counts: Mapping) -> list[tuple[str, str, Kind, int]]:
    return sorted(((t, l, k, c) for (t, l, k), c in counts.items()),
                  key=lambda r: (r[0], r[1], r[2].rank))
