"""Constrained search over per-sentence joint state-change assignments.

A node is a prefix of joint assignments (one kind per entity per sentence).
Expanding a node enumerates the K^|E| joint assignments for the next
sentence, drops those the hard constraints reject, scores the survivors with
a mix of model logits and log priors, softmax-normalizes the scores over the
survivors and adds the log weight to the parent's score. Location parameters
are filled in after the kind sequence is fixed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .constraints import (
    HardConstraintConfig,
    MentionIndex,
    Summary,
    advance_summary,
    allowable_extension,
    allowed_kinds,
    audit_kinds,
    build_mention_index,
    initial_summary,
)
from .core import (
    K,
    ActionSequence,
    EntityState,
    Grid,
    Kind,
    Paragraph,
    Slot,
    StateChange,
    StepAction,
    grid_from_sequence,
)
from .errors import DeadEnd, DimensionError, InstanceTooLarge
from .priors import PriorTable, log_prior_matrix, prior

if TYPE_CHECKING:
    from .scorer import StepLogits

# exhaustive search refuses instances with more than K^12 raw sequences
EXACT_SPACE_CAP = K ** 12

_RANK = np.array([Kind(k).rank for k in range(K)])


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 10
    lam: float = 0.5
    use_hard: bool = True
    use_soft: bool = True
    max_entities_for_exact: int = 4

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.max_entities_for_exact < 1:
            raise ValueError("max_entities_for_exact must be positive")


@dataclass(frozen=True)
class SearchNode:
    prefix: tuple[tuple[int, ...], ...]
    score: float
    summary: Summary
    step: int
    code: tuple[int, ...] = ()

    @property
    def kinds(self) -> tuple[tuple[Kind, ...], ...]:
        return tuple(tuple(Kind(k) for k in row) for row in self.prefix)


class Expansion(NamedTuple):
    kinds: tuple[Kind, ...]
    weight: float
    child: SearchNode


@dataclass
class SearchStats:
    expanded: int = 0          # child nodes scored
    raw_candidates: int = 0    # joint assignments considered before pruning
    expansions: int = 0        # parent nodes expanded
    weight_sums: list = field(default_factory=list)


class DecodeResult(NamedTuple):
    sequence: ActionSequence
    grid: Grid
    score: float


def _soft_active(priors: Optional[PriorTable], config: DecoderConfig) -> bool:
    return config.use_soft and priors is not None


def local_scores(logits: "StepLogits", priors: Optional[PriorTable], paragraph: Paragraph,
                 config: DecoderConfig) -> np.ndarray:
    """T x E x K table of per-entity terms of the expansion score."""
    values = np.asarray(logits.values, dtype=float)
    if not _soft_active(priors, config):
        return values
    logp = log_prior_matrix(priors, paragraph.entities, paragraph.topic)
    return config.lam * values + (1.0 - config.lam) * logp[None, :, :]


def expansion_score(logits: "StepLogits", priors: Optional[PriorTable], paragraph: Paragraph,
                    step_action, t: int, lam: float, use_soft: bool = True) -> float:
    """Score of assigning ``step_action`` at 0-based step ``t``."""
    kinds = step_action.kinds if isinstance(step_action, StepAction) else tuple(step_action)
    soft = use_soft and priors is not None
    total = 0.0
    for j, k in enumerate(kinds):
        logit = float(logits.values[t, j, int(k)])
        if soft:
            p = prior(priors, paragraph.entities[j], paragraph.topic, Kind(k))
            total += lam * logit + (1.0 - lam) * math.log(p)
        else:
            total += logit
    return total


def _check_dims(paragraph: Paragraph, initial: Sequence[EntityState], logits) -> None:
    expected = (paragraph.n_steps, paragraph.n_entities, K)
    found = tuple(np.shape(logits.values))
    if found != expected:
        raise DimensionError(f"logits have shape {found}, expected (T, E, K) = {expected}")
    if len(initial) != paragraph.n_entities:
        raise DimensionError(f"initial row has {len(initial)} states for {paragraph.n_entities} entities")


class SearchSpace:
    """Per-paragraph search state shared by beam search, gold-path loss and expand()."""

    def __init__(self, paragraph: Paragraph, initial: Sequence[EntityState], logits: "StepLogits",
                 priors: Optional[PriorTable] = None, hard: Optional[HardConstraintConfig] = None,
                 config: Optional[DecoderConfig] = None, mentions: Optional[MentionIndex] = None,
                 factored: bool = True, local: Optional[np.ndarray] = None):
        config = config or DecoderConfig()
        hard = hard or HardConstraintConfig()
        _check_dims(paragraph, initial, logits)
        self.paragraph = paragraph
        self.initial = tuple(initial)
        self.logits = logits
        self.config = config
        self.hard = hard if config.use_hard else HardConstraintConfig.disabled()
        self.mentions = mentions or build_mention_index(paragraph)
        self.factored = factored
        self.soft = _soft_active(priors, config)
        self.local = local if local is not None else local_scores(logits, priors, paragraph, config)
        self.n_entities = paragraph.n_entities
        self.n_steps = paragraph.n_steps
        self._products: dict = {}

    @property
    def lam_effective(self) -> float:
        """Weight of the logits inside the expansion score."""
        return self.config.lam if self.soft else 1.0

    def root(self) -> SearchNode:
        return SearchNode((), 0.0, initial_summary(self.initial), 0, ())

    def _product(self, options: tuple[tuple[int, ...], ...]) -> np.ndarray:
        arr = self._products.get(options)
        if arr is None:
            arr = np.array(list(itertools.product(*options)), dtype=np.int64).reshape(-1, len(options))
            self._products[options] = arr
        return arr

    def candidates(self, node: SearchNode) -> np.ndarray:
        """Allowable joint assignments (n x E kind indices) for the next sentence."""
        t = node.step + 1
        everything = tuple(tuple(range(K)) for _ in range(self.n_entities))
        if not self.hard.any_enabled:
            return self._product(everything)
        if not self.factored:
            full = self._product(everything)
            keep = [allowable_extension(node.summary, row, t, self.mentions, self.hard) for row in full]
            return full[np.array(keep, dtype=bool)]
        options = tuple(
            tuple(int(k) for k in allowed_kinds(es, t, self.mentions.first_mention[j],
                                                self.mentions.n_sentences, self.hard))
            for j, es in enumerate(node.summary))
        combos = self._product(options)
        if self.hard.enable_d2:
            changed = (combos != int(Kind.NONE)).sum(axis=1)
            combos = combos[changed <= self.hard.entity_cap(self.n_entities)]
        return combos

    def survivors(self, node: SearchNode, stats: Optional[SearchStats] = None):
        """(combos, log_weights) for the allowable expansions of ``node``."""
        if node.step >= self.n_steps:
            raise ValueError("node is already complete")
        combos = self.candidates(node)
        if len(combos) == 0:
            raise DeadEnd(f"no allowable expansion at step {node.step + 1} of paragraph "
                          f"{self.paragraph.id!r}")
        phi = self.local[node.step][np.arange(self.n_entities), combos].sum(axis=1)
        logw = phi - logsumexp(phi)
        if stats is not None:
            stats.expansions += 1
            stats.expanded += len(combos)
            stats.raw_candidates += K ** self.n_entities
            stats.weight_sums.append(float(np.exp(logw).sum()))
        return combos, logw

    def child(self, node: SearchNode, combo, logw: float) -> SearchNode:
        row = tuple(int(k) for k in combo)
        return SearchNode(node.prefix + (row,), node.score + float(logw),
                          advance_summary(node.summary, row), node.step + 1,
                          node.code + tuple(int(_RANK[k]) for k in row))

    def expand(self, node: SearchNode, stats: Optional[SearchStats] = None) -> list[Expansion]:
        combos, logw = self.survivors(node, stats)
        return [Expansion(tuple(Kind(k) for k in combo), float(math.exp(lw)),
                          self.child(node, combo, lw))
                for combo, lw in zip(combos, logw)]


def expand(node: SearchNode, space: SearchSpace, stats: Optional[SearchStats] = None) -> list[Expansion]:
    return space.expand(node, stats)


def _select(beam: list[SearchNode], batches, width: int) -> list[tuple]:
    """Global top-``width`` (parent, combo, logw) by score, ties by sequence code."""
    scores = np.concatenate([node.score + logw for node, (_, logw) in zip(beam, batches)])
    owner = np.concatenate([np.full(len(c), b) for b, (c, _) in enumerate(batches)])
    offset = np.concatenate([np.arange(len(c)) for c, _ in batches])
    if len(scores) > width:
        cut = np.partition(scores, len(scores) - width)[len(scores) - width]
        pool = np.flatnonzero(scores >= cut)
    else:
        pool = np.arange(len(scores))
    keyed = []
    for i in pool:
        b, o = int(owner[i]), int(offset[i])
        combo, logw = batches[b][0][o], batches[b][1][o]
        keyed.append(((-scores[i], beam[b].code + tuple(int(r) for r in _RANK[combo])), b, combo, logw))
    keyed.sort(key=lambda item: item[0])
    return [(b, combo, logw) for _, b, combo, logw in keyed[:width]]


def search_kinds(space: SearchSpace, width: int, stats: Optional[SearchStats] = None) -> SearchNode:
    beam = [space.root()]
    for _ in range(space.n_steps):
        batches = [space.survivors(node, stats) for node in beam]
        beam = [space.child(beam[b], combo, logw) for b, combo, logw in _select(beam, batches, width)]
    return beam[0]


def decode_parameters(seq, logits: "StepLogits") -> ActionSequence:
    """Fill every parameter slot with its top-ranked candidate location."""
    kind_rows = seq.kinds if isinstance(seq, ActionSequence) else seq
    steps = []
    for t, row in enumerate(kind_rows):
        changes = []
        for j, k in enumerate(row):
            k = Kind(k)
            if k == Kind.MOVE:
                change = StateChange.move(logits.top(t, j, Slot.MOVE_BEFORE),
                                          logits.top(t, j, Slot.MOVE_AFTER))
            elif k == Kind.CREATE:
                change = StateChange.create(logits.top(t, j, Slot.CREATE_AFTER))
            elif k == Kind.DESTROY:
                change = StateChange.destroy(logits.top(t, j, Slot.DESTROY_BEFORE))
            else:
                change = StateChange(Kind.NONE)
            changes.append(change)
        steps.append(StepAction(tuple(changes)))
    return ActionSequence(tuple(steps))


def beam_search(paragraph: Paragraph, initial: Sequence[EntityState], logits: "StepLogits",
                priors: Optional[PriorTable] = None, hard: Optional[HardConstraintConfig] = None,
                config: Optional[DecoderConfig] = None,
                stats: Optional[SearchStats] = None) -> DecodeResult:
    config = config or DecoderConfig()
    space = SearchSpace(paragraph, initial, logits, priors, hard, config)
    best = search_kinds(space, config.beam_width, stats)
    seq = decode_parameters(best.prefix, logits)
    grid = grid_from_sequence(initial, seq, strict=False)
    return DecodeResult(seq, grid, best.score)


def exhaustive_search(paragraph: Paragraph, initial: Sequence[EntityState], logits: "StepLogits",
                      priors: Optional[PriorTable] = None, hard: Optional[HardConstraintConfig] = None,
                      config: Optional[DecoderConfig] = None,
                      frontier: Optional[list] = None) -> tuple[ActionSequence, float]:
    """Enumerate every allowable sequence and return the best one.

    Shares no search code with :func:`beam_search`: allowability comes from the
    full-sequence audit and scores are replayed with plain floats. If
    ``frontier`` is a list it receives the number of allowable prefixes at
    each depth.
    """
    config = config or DecoderConfig()
    hard = hard or HardConstraintConfig()
    if not config.use_hard:
        hard = HardConstraintConfig.disabled()
    _check_dims(paragraph, initial, logits)
    n_ent, n_steps = paragraph.n_entities, paragraph.n_steps
    if n_ent > config.max_entities_for_exact or K ** (n_ent * n_steps) > EXACT_SPACE_CAP:
        raise InstanceTooLarge(f"|E|={n_ent}, T={n_steps}: K^(|E|T) = {K}^{n_ent * n_steps} "
                               f"exceeds the exhaustive-search cap {K}^12 "
                               f"(or |E| > {config.max_entities_for_exact})")

    mentions = build_mention_index(paragraph)
    exists0 = [s.exists for s in initial]
    soft = config.use_soft and priors is not None
    lam = config.lam
    log_p = [[math.log(prior(priors, e, paragraph.topic, Kind(k))) if soft else 0.0 for k in range(K)]
             for e in paragraph.entities]
    assignments = list(itertools.product(range(K), repeat=n_ent))
    counts = [0] * (n_steps + 1)

    def phi(t, a):
        if not soft:
            return sum(float(logits.values[t, j, k]) for j, k in enumerate(a))
        return sum(lam * float(logits.values[t, j, k]) + (1.0 - lam) * log_p[j][k]
                   for j, k in enumerate(a))

    best = [None, None]

    def visit(prefix: list, score: float):
        t = len(prefix)
        counts[t] += 1
        if t == n_steps:
            key = (-score, tuple(Kind(k).rank for row in prefix for k in row))
            if best[0] is None or key < best[0]:
                best[0], best[1] = key, [tuple(r) for r in prefix]
            return
        ok = []
        for a in assignments:
            found = audit_kinds(prefix + [a], exists0, mentions.first_mention, n_steps, hard)
            if not any(v.step == t + 1 for v in found):
                ok.append(a)
        if not ok:
            raise DeadEnd(f"no allowable expansion at step {t + 1}")
        scores = [phi(t, a) for a in ok]
        top = max(scores)
        log_z = top + math.log(math.fsum(math.exp(s - top) for s in scores))
        for a, s in zip(ok, scores):
            visit(prefix + [a], score + (s - log_z))

    visit([], 0.0)
    if frontier is not None:
        frontier[:] = counts
    return decode_parameters(best[1], logits), -best[0][0]
