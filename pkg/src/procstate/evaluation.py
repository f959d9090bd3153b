"""Answer derivation and scoring for the four process questions.

Q1 inputs      entities that exist at the start but not at the end
Q2 outputs     entities that do not exist at the start but do at the end
Q3 conversions (destroyed set, created set, location, sentence) per step with both
Q4 moves       (entity, from, to, sentence) whenever an existing entity relocates

Q3/Q4 tuples are paired only within the same sentence and earn partial credit
for the number of matching non-sentence fields out of three.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import UNKNOWN, Grid, Location, Paragraph
from .errors import DimensionError, MissingPrediction

log = logging.getLogger(__name__)

QUESTIONS = ("inputs", "outputs", "conversions", "moves")


class Conversion(NamedTuple):
    convert_from: frozenset
    convert_to: frozenset
    location: Location
    sentence_id: int


class Move(NamedTuple):
    entity: str
    source: Location
    target: Location
    sentence_id: int


@dataclass(frozen=True)
class AnswerTuples:
    inputs: frozenset = frozenset()
    outputs: frozenset = frozenset()
    conversions: tuple = ()
    moves: tuple = ()


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(mass: float, n_pred: int, n_gold: int) -> tuple[float, float]:
    p = mass / n_pred if n_pred else (1.0 if n_gold == 0 else 0.0)
    r = mass / n_gold if n_gold else (1.0 if n_pred == 0 else 0.0)
    return p, r


def derive_answers(grid: Grid, paragraph: Paragraph) -> AnswerTuples:
    if grid.n_entities != paragraph.n_entities or grid.n_steps != paragraph.n_steps:
        raise DimensionError(f"grid is {grid.n_steps + 1}x{grid.n_entities}, paragraph "
                             f"{paragraph.id!r} needs {paragraph.n_steps + 1}x{paragraph.n_entities}")
    ids = paragraph.entity_ids
    first, last = grid.rows[0], grid.rows[-1]
    inputs = frozenset(e for e, a, b in zip(ids, first, last) if a.exists and not b.exists)
    outputs = frozenset(e for e, a, b in zip(ids, first, last) if not a.exists and b.exists)
    conversions, moves = [], []
    for t in range(1, len(grid)):
        prev, cur = grid.rows[t - 1], grid.rows[t]
        destroyed = [ids[j] for j in range(len(ids)) if prev[j].exists and not cur[j].exists]
        created = [j for j in range(len(ids)) if not prev[j].exists and cur[j].exists]
        if destroyed and created:
            places = {cur[j].location for j in created}
            location = places.pop() if len(places) == 1 else UNKNOWN
            conversions.append(Conversion(frozenset(destroyed), frozenset(ids[j] for j in created),
                                          location, t))
        for j, e in enumerate(ids):
            if prev[j].exists and cur[j].exists and prev[j].location != cur[j].location:
                moves.append(Move(e, prev[j].location, cur[j].location, t))
    return AnswerTuples(inputs, outputs, tuple(conversions), tuple(moves))


def score_sets(gold: Iterable, pred: Iterable) -> PRF:
    gold, pred = set(gold), set(pred)
    p, r = _ratio(len(gold & pred), len(pred), len(gold))
    return PRF(p, r, f1(p, r))


def similarity(gold: Sequence, pred: Sequence) -> float:
    """Fraction of the three non-sentence fields that agree; 0 across sentences.

    Entity sets compare as sets, locations by exact (whitespace-normalized) text.
    """
    if gold[-1] != pred[-1]:
        return 0.0
    return sum(g == p for g, p in zip(gold[:-1], pred[:-1])) / 3.0


def match_mass(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> float:
    """Total similarity of a maximum-weight one-to-one pairing within sentence ids."""
    total = 0.0
    for sid in {t[-1] for t in gold} & {t[-1] for t in pred}:
        g = [x for x in gold if x[-1] == sid]
        p = [x for x in pred if x[-1] == sid]
        weights = np.array([[similarity(a, b) for b in p] for a in g])
        rows, cols = linear_sum_assignment(weights, maximize=True)
        total += float(weights[rows, cols].sum())
    return total


def score_tuples(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> PRF:
    p, r = _ratio(match_mass(gold, pred), len(pred), len(gold))
    return PRF(p, r, f1(p, r))


@dataclass
class ScoreReport:
    rows: dict[str, PRF]
    counts: dict[str, dict] = field(default_factory=dict)

    @property
    def macro_precision(self) -> float:
        return float(np.mean([r.precision for r in self.rows.values()]))

    @property
    def macro_recall(self) -> float:
        return float(np.mean([r.recall for r in self.rows.values()]))

    @property
    def macro_f1(self) -> float:
        return float(np.mean([r.f1 for r in self.rows.values()]))

    def to_json(self) -> dict:
        out = {q: {"precision": r.precision, "recall": r.recall, "f1": r.f1, **self.counts.get(q, {})}
               for q, r in self.rows.items()}
        out["macro"] = {"precision": self.macro_precision, "recall": self.macro_recall,
                        "f1": self.macro_f1}
        return out

    def to_text(self) -> str:
        lines = [f"{'question':<12} {'precision':>9} {'recall':>9} {'f1':>9}"]
        for q, r in self.rows.items():
            lines.append(f"{q:<12} {r.precision:>9.4f} {r.recall:>9.4f} {r.f1:>9.4f}")
        lines.append(f"{'macro':<12} {self.macro_precision:>9.4f} {self.macro_recall:>9.4f} "
                     f"{self.macro_f1:>9.4f}")
        return "\n".join(lines)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False)


def evaluate(gold: Mapping[str, Grid], predicted: Mapping[str, Grid],
             paragraphs: Mapping[str, Paragraph]) -> ScoreReport:
    """Pool matches over paragraphs per question, then macro-average the questions."""
    missing = [pid for pid in gold if pid not in predicted]
    if missing:
        raise MissingPrediction(missing)
    extra = sorted(set(predicted) - set(gold))
    if extra:
        log.warning("ignoring predictions without gold: %s", ", ".join(extra))
    tally = {q: [0.0, 0, 0] for q in QUESTIONS}  # match mass, |pred|, |gold|
    for pid in gold:
        g = derive_answers(gold[pid], paragraphs[pid])
        p = derive_answers(predicted[pid], paragraphs[pid])
        for q in ("inputs", "outputs"):
            gs, ps = getattr(g, q), getattr(p, q)
            tally[q][0] += len(gs & ps)
            tally[q][1] += len(ps)
            tally[q][2] += len(gs)
        for q in ("conversions", "moves"):
            gs, ps = getattr(g, q), getattr(p, q)
            tally[q][0] += match_mass(gs, ps)
            tally[q][1] += len(ps)
            tally[q][2] += len(gs)
    rows, counts = {}, {}
    for q, (mass, n_pred, n_gold) in tally.items():
        prec, rec = _ratio(mass, n_pred, n_gold)
        rows[q] = PRF(prec, rec, f1(prec, rec))
        counts[q] = {"matched": mass, "predicted": n_pred, "gold": n_gold}
    return ScoreReport(rows, counts)
