"""Local evidence for the decoder: per (sentence, entity) change-kind logits.

Logits come either from a file written by any external model or from
:class:`LexicalScorerModel`, a sparse linear model over lexical features that
is trained by following the gold path through the constrained search space.
Location parameters are chosen by ranking candidate spans.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .constraints import HardConstraintConfig, mention_positions, violations
from .core import (
    PARAM_SLOTS,
    UNKNOWN,
    K,
    ActionSequence,
    EntityState,
    Grid,
    Kind,
    Location,
    Paragraph,
    Sentence,
    Slot,
    sequence_from_grid,
)
from .decoder import DecoderConfig, SearchSpace, local_scores
from .errors import DimensionError, GoldPathPruned, SchemaError
from .fileio import atomic_write
from .priors import PriorTable

log = logging.getLogger(__name__)

LOGITS_FORMAT = "procstate.logits"
FORMAT_VERSION = 1
MAX_SPAN_LEN = 3

SpanKey = tuple[int, int, Slot]


def candidate_spans(sentence: Sentence, max_len: int = MAX_SPAN_LEN) -> list[Location]:
    """Unknown followed by every contiguous word span of up to ``max_len`` tokens."""
    words = sentence.tokens
    out = [UNKNOWN]
    seen = set()
    for n in range(1, max_len + 1):
        for i in range(len(words) - n + 1):
            piece = words[i:i + n]
            if not all(any(c.isalnum() for c in w) for w in piece):
                continue
            loc = Location(" ".join(piece))
            if loc not in seen:
                seen.add(loc)
                out.append(loc)
    return out


@dataclass
class StepLogits:
    """T x E x K activations plus ranked candidate locations per parameter slot.

    ``spans`` maps (0-based step, entity index, slot) to (Location, score)
    pairs sorted by descending score; keys absent from the map fall back to
    the default candidates of that sentence, all scored 0 with Unknown first.
    """

    values: np.ndarray
    spans: dict = field(default_factory=dict)
    paragraph: Optional[Paragraph] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != K:
            raise DimensionError(f"logits must have shape (T, E, {K}), got {self.values.shape}")
        self._defaults: dict = {}

    @property
    def shape(self):
        return self.values.shape

    def candidates(self, t: int, j: int, slot: Slot) -> tuple[tuple[Location, float], ...]:
        ranked = self.spans.get((t, j, Slot(slot)))
        if ranked:
            return ranked
        if t not in self._defaults:
            if self.paragraph is None:
                self._defaults[t] = ((UNKNOWN, 0.0),)
            else:
                self._defaults[t] = tuple((loc, 0.0) for loc in candidate_spans(self.paragraph.sentences[t]))
        return self._defaults[t]

    def top(self, t: int, j: int, slot: Slot) -> Location:
        return self.candidates(t, j, slot)[0][0]


def rank_candidates(pairs: Iterable[tuple[Location, float]]) -> tuple[tuple[Location, float], ...]:
    """Sort by descending score (stable) and make sure Unknown is present."""
    pairs = list(pairs)
    if not any(loc.is_unknown for loc, _ in pairs):
        floor = min((s for _, s in pairs), default=0.0)
        pairs.append((UNKNOWN, floor))
    return tuple(sorted(pairs, key=lambda p: -p[1]))


# ---------------------------------------------------------------------------
# logits file
# ---------------------------------------------------------------------------

def parse_logits_record(obj: Mapping, paragraph: Paragraph, line: Optional[int] = None) -> StepLogits:
    try:
        dims = obj["dims"]
        n_t, n_e, n_k = int(dims["T"]), int(dims["E"]), int(dims["K"])
        values = obj["values"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"logits record lacks {exc}", line=line, field="dims") from None
    expected = (paragraph.n_steps, paragraph.n_entities, K)
    if (n_t, n_e, n_k) != expected:
        raise DimensionError(f"expected T={expected[0]}, E={expected[1]}, K={expected[2]}; "
                             f"found T={n_t}, E={n_e}, K={n_k}", line=line, field="dims")
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("values must be a flat list of numbers", line=line, field="values") from None
    if arr.ndim != 1 or arr.size != n_t * n_e * n_k:
        raise DimensionError(f"expected {n_t * n_e * n_k} values, found {arr.size}", line=line, field="values")
    if not np.all(np.isfinite(arr)):
        raise SchemaError("values must be finite", line=line, field="values")
    grouped: dict = {}
    for i, block in enumerate(obj.get("spans") or []):
        where = f"spans[{i}]"
        try:
            t, j, slot = int(block["t"]), int(block["j"]), Slot(block["slot"])
            text, score = block["span"], float(block["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad candidate span block ({exc})", line=line, field=where) from None
        if not (1 <= t <= n_t and 0 <= j < n_e):
            raise DimensionError(f"span block at t={t}, j={j} is outside T={n_t}, E={n_e}",
                                 line=line, field=where)
        if not isinstance(text, str) or not text.strip():
            raise SchemaError("span text must be a non-empty string", line=line, field=where)
        loc = UNKNOWN if text == "?" else Location(text)
        grouped.setdefault((t - 1, j, slot), []).append((loc, score))
    spans = {key: rank_candidates(pairs) for key, pairs in grouped.items()}
    return StepLogits(arr.reshape(n_t, n_e, n_k), spans, paragraph)


def load_logits(path, paragraphs: Mapping[str, Paragraph]) -> dict[str, StepLogits]:
    """Read a logits file; every record must name a paragraph in ``paragraphs``."""
    out: dict[str, StepLogits] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    records = _jsonl(lines, LOGITS_FORMAT)
    for lineno, obj in records:
        pid = obj.get("paragraph_id")
        if not isinstance(pid, str):
            raise SchemaError("missing paragraph_id", line=lineno, field="paragraph_id")
        if pid not in paragraphs:
            raise SchemaError(f"unknown paragraph {pid!r}", line=lineno, field="paragraph_id")
        if pid in out:
            raise SchemaError(f"duplicate paragraph {pid!r}", line=lineno, field="paragraph_id")
        out[pid] = parse_logits_record(obj, paragraphs[pid], lineno)
    return out


def logits_record(pid: str, logits: StepLogits) -> dict:
    n_t, n_e, n_k = logits.values.shape
    spans = []
    for (t, j, slot), ranked in sorted(logits.spans.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
        for loc, score in ranked:
            spans.append({"t": t + 1, "j": j, "slot": slot.value, "span": str(loc), "score": score})
    return {"paragraph_id": pid, "dims": {"T": n_t, "E": n_e, "K": n_k},
            "values": [float(v) for v in logits.values.ravel()], "spans": spans}


def write_logits(path, items: Iterable[tuple[str, StepLogits]]) -> None:
    lines = [json.dumps({"format": LOGITS_FORMAT, "version": FORMAT_VERSION})]
    lines += [json.dumps(logits_record(pid, lg)) for pid, lg in items]
    atomic_write(path, "\n".join(lines) + "\n")


def _jsonl(lines: Sequence[str], fmt: str) -> list[tuple[int, dict]]:
    """Parse versioned JSON lines; returns (1-based line, object) for each record."""
    body = [(i, ln) for i, ln in enumerate(lines, start=1) if ln.strip()]
    if not body:
        raise SchemaError("empty file: missing format header", line=1)
    out = []
    for i, ln in body:
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line=i) from None
        if not isinstance(obj, dict):
            raise SchemaError("each line must be a JSON object", line=i)
        out.append((i, obj))
    head_line, head = out[0]
    if head.get("format") != fmt:
        raise SchemaError(f"expected format {fmt!r}, found {head.get('format')!r}", line=head_line, field="format")
    if head.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported version {head.get('version')!r}", line=head_line, field="version")
    return out[1:]


# ---------------------------------------------------------------------------
# lexical baseline
# ---------------------------------------------------------------------------

STOPWORDS = frozenset("""
a an the and or but of to in into on onto at by for from with as is are was were be been being
it its itself this that these those then than there their they them which who whom whose while
when where how also so such very can will may not no some any all each other more most
""".split())


def simple_lemma(word: str) -> str:
    """Crude English verb lemma: strips a plural/3rd-person suffix only."""
    w = word.lower()
    if len(w) > 4 and w.endswith("ies"):
        return w[:-3] + "y"
    if len(w) > 4 and w.endswith(("sses", "ches", "shes", "xes", "zes")):
        return w[:-2]
    if len(w) > 3 and w.endswith("s") and not w.endswith(("ss", "us", "is")):
        return w[:-1]
    return w


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or int(self.epochs) != self.epochs:
            raise ValueError("epochs must be a non-negative integer")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class LexicalScorerModel:
    """Linear scorer: logit = sum of weights of the active indicator features.

    Kind features (suffixed with ``|KIND``): bias; each predicate lemma in the
    sentence; entity mentioned in the sentence; a predicate within two tokens
    of the mention; and, when mentioned, predicate lemma x side of the
    mention (pre/post). Span features (prefixed ``span:<slot>``) score
    candidate locations.
    """

    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, w in self.weights.items():
            if not math.isfinite(w):
                raise ValueError(f"weight {name!r} is not finite")

    def copy(self) -> "LexicalScorerModel":
        return LexicalScorerModel(dict(self.weights))

    def to_json(self) -> dict:
        return {"format": "procstate.model", "version": FORMAT_VERSION,
                "weights": {k: self.weights[k] for k in sorted(self.weights)}}

    @classmethod
    def from_json(cls, obj: Mapping) -> "LexicalScorerModel":
        if obj.get("format") != "procstate.model" or obj.get("version") != FORMAT_VERSION:
            raise SchemaError("not a procstate.model v1 document", field="format")
        weights = obj.get("weights")
        if not isinstance(weights, dict):
            raise SchemaError("weights must be an object", field="weights")
        try:
            return cls({str(k): float(v) for k, v in weights.items()})
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), field="weights") from None


def _predicates(sentence: Sentence, mention_tokens: set[int]) -> list[tuple[int, str]]:
    out = []
    for i, tok in enumerate(sentence.tokens):
        low = tok.lower()
        if i in mention_tokens or low in STOPWORDS or not tok.isalpha():
            continue
        out.append((i, simple_lemma(low)))
    return out


class ParagraphFeatures:
    """Feature names for every kind logit and every candidate span of a paragraph."""

    def __init__(self, paragraph: Paragraph):
        self.paragraph = paragraph
        n_t, n_e = paragraph.n_steps, paragraph.n_entities
        self.kind: list[list[str]] = [[] for _ in range(n_t * n_e * K)]
        self.spans: dict[tuple[int, Slot], list[tuple[Location, list[str]]]] = {}
        mention_lists = [tuple(e.mentions) for e in paragraph.entities]
        all_mentions = {m.lower() for ms in mention_lists for m in ms}
        for t, sentence in enumerate(paragraph.sentences):
            positions = [mention_positions(sentence.tokens, ms) for ms in mention_lists]
            covered = {i for pos in positions for a, b in pos for i in range(a, b)}
            preds = _predicates(sentence, covered)
            lemmas = sorted({lemma for _, lemma in preds})
            for j in range(n_e):
                base = ["bias"] + [f"verb={lemma}" for lemma in lemmas]
                if positions[j]:
                    start, end = positions[j][0]
                    base.append("mention")
                    if any(start - 2 <= i < end + 2 for i, _ in preds):
                        base.append("adjacent")
                    sides = {}
                    for i, lemma in preds:
                        sides.setdefault(lemma, "pre" if start < i else "post")
                    base += [f"verb={lemma}|{side}" for lemma, side in sorted(sides.items())]
                for k in range(K):
                    self.kind[(t * n_e + j) * K + k] = [f"{b}|{Kind(k).name}" for b in base]
            lower = [w.lower() for w in sentence.tokens]
            cands = candidate_spans(sentence)
            for slot in Slot:
                feats = []
                for loc in cands:
                    if loc.is_unknown:
                        names = [f"span:{slot.value}|unknown"]
                    else:
                        words = loc.text.split()
                        n = len(words)
                        starts = [i for i in range(len(lower) - n + 1)
                                  if lower[i:i + n] == [w.lower() for w in words]]
                        prev = lower[starts[0] - 1] if starts and starts[0] > 0 else "<s>"
                        names = [f"span:{slot.value}|text={loc.key()}", f"span:{slot.value}|len={n}",
                                 f"span:{slot.value}|prev={prev}"]
                        if loc.key() in all_mentions:
                            names.append(f"span:{slot.value}|entity")
                    feats.append((loc, names))
                self.spans[(t, slot)] = feats

    def kind_features(self, t: int, j: int, k: int) -> list[str]:
        return self.kind[(t * self.paragraph.n_entities + j) * K + k]


def score(model: LexicalScorerModel, paragraph: Paragraph,
          features: Optional[ParagraphFeatures] = None) -> StepLogits:
    feats = features or ParagraphFeatures(paragraph)
    w = model.weights
    n_t, n_e = paragraph.n_steps, paragraph.n_entities
    values = np.array([sum(w.get(f, 0.0) for f in names) for names in feats.kind],
                      dtype=float).reshape(n_t, n_e, K)
    spans = {}
    for (t, slot), cands in feats.spans.items():
        ranked = tuple(sorted(((loc, sum(w.get(f, 0.0) for f in names)) for loc, names in cands),
                              key=lambda p: -p[1]))
        for j in range(n_e):
            spans[(t, j, slot)] = ranked
    return StepLogits(values, spans, paragraph)


# ---------------------------------------------------------------------------
# gold-path loss
# ---------------------------------------------------------------------------

class LossResult(NamedTuple):
    loss: float
    d_logits: np.ndarray                 # dL/dvalues, T x E x K
    d_spans: dict                        # (t, j, slot) -> dL/dscore per ranked candidate
    unreachable: int                     # gold parameter values absent from the candidates


def _gold_index(ranked, gold: Location) -> Optional[int]:
    key = gold.key()
    for i, (loc, _) in enumerate(ranked):
        if loc.key() == key:
            return i
    return None


def loss_and_grad(logits: StepLogits, gold: ActionSequence, paragraph: Paragraph,
                  initial: Sequence[EntityState], priors: Optional[PriorTable] = None,
                  lam: float = 1.0, hard: Optional[HardConstraintConfig] = None,
                  use_soft: bool = True, space: Optional[SearchSpace] = None) -> LossResult:
    """Negative log-likelihood of the gold path plus its location parameters.

    Each step contributes -log of the gold joint assignment's normalized
    weight among the allowable expansions of the gold prefix; each gold
    location parameter contributes -log softmax over its candidate scores.
    Parameters whose gold value is not among the candidates are skipped.
    """
    config = DecoderConfig(lam=lam, use_hard=True, use_soft=use_soft)
    if space is None:
        space = SearchSpace(paragraph, initial, logits, priors, hard or HardConstraintConfig(), config)
    else:
        space.local = local_scores(logits, priors, paragraph, config)
        space.logits = logits
    if len(gold) != paragraph.n_steps:
        raise DimensionError(f"gold has {len(gold)} steps, paragraph has {paragraph.n_steps}")
    scale = space.lam_effective
    n_e = paragraph.n_entities
    d_logits = np.zeros_like(logits.values)
    total = 0.0
    node = space.root()
    for t, step in enumerate(gold.steps):
        gold_row = np.array([int(k) for k in step.kinds])
        combos, logw = space.survivors(node)
        hit = np.flatnonzero((combos == gold_row).all(axis=1))
        if len(hit) == 0:
            raise GoldPathPruned(f"gold step {t + 1} is not an allowable expansion", paragraph.id, t + 1)
        g = int(hit[0])
        total -= float(logw[g])
        weights = np.exp(logw)
        marginal = np.zeros((n_e, K))
        for j in range(n_e):
            marginal[j] = np.bincount(combos[:, j], weights=weights, minlength=K)
        marginal[np.arange(n_e), gold_row] -= 1.0
        d_logits[t] = scale * marginal
        node = space.child(node, gold_row, logw[g])

    d_spans: dict = {}
    unreachable = 0
    for t, step in enumerate(gold.steps):
        for j, change in enumerate(step.changes):
            for slot in PARAM_SLOTS[change.kind]:
                ranked = logits.candidates(t, j, slot)
                gi = _gold_index(ranked, change.param(slot))
                if gi is None:
                    unreachable += 1
                    continue
                scores = np.array([s for _, s in ranked])
                logp = scores - logsumexp(scores)
                total -= float(logp[gi])
                grad = np.exp(logp)
                grad[gi] -= 1.0
                key = (t, j, slot)
                d_spans[key] = d_spans.get(key, 0.0) + grad
    return LossResult(max(total, 0.0), d_logits, d_spans, unreachable)


def loss(logits: StepLogits, gold: ActionSequence, paragraph: Paragraph,
         initial: Sequence[EntityState], soft_priors: Optional[PriorTable] = None,
         lam: float = 1.0, hard: Optional[HardConstraintConfig] = None, use_soft: bool = True) -> float:
    return loss_and_grad(logits, gold, paragraph, initial, soft_priors, lam, hard, use_soft).loss


class _Compiled:
    """A training example with its features mapped onto a shared vocabulary."""

    def __init__(self, paragraph: Paragraph, initial, gold: ActionSequence, vocab: dict[str, int]):
        self.paragraph = paragraph
        self.initial = tuple(initial)
        self.gold = gold
        feats = ParagraphFeatures(paragraph)
        self.kind_matrix = _rows_to_csr(feats.kind, vocab)
        self.span_blocks = {}
        for (t, slot), cands in feats.spans.items():
            self.span_blocks[(t, slot)] = ([loc for loc, _ in cands],
                                           _rows_to_csr([names for _, names in cands], vocab))
        self._spaces: dict = {}

    def logits(self, w: np.ndarray) -> StepLogits:
        p = self.paragraph
        values = (self.kind_matrix @ w).reshape(p.n_steps, p.n_entities, K)
        spans = {}
        self._orders = {}
        for (t, slot), (locs, mat) in self.span_blocks.items():
            s = mat @ w
            order = np.argsort(-s, kind="stable")
            self._orders[(t, slot)] = order
            ranked = tuple((locs[i], float(s[i])) for i in order)
            for j in range(p.n_entities):
                spans[(t, j, slot)] = ranked
        return StepLogits(values, spans, p)

    def loss_grad(self, w, priors, lam, hard, use_soft):
        lg = self.logits(w)
        # the mention index and product tables are reused; a space is only valid for one setting
        key = (id(priors), lam, hard, use_soft)
        space = self._spaces.get(key)
        if space is None:
            config = DecoderConfig(lam=lam, use_hard=True, use_soft=use_soft)
            space = self._spaces[key] = SearchSpace(self.paragraph, self.initial, lg, priors, hard, config)
        res = loss_and_grad(lg, self.gold, self.paragraph, self.initial, priors, lam, hard,
                            use_soft, space=space)
        grad = self.kind_matrix.T @ res.d_logits.ravel()
        for (t, j, slot), d in res.d_spans.items():
            _, mat = self.span_blocks[(t, slot)]
            unsorted = np.empty_like(d)
            unsorted[self._orders[(t, slot)]] = d
            grad = grad + mat.T @ unsorted
        return res.loss, np.asarray(grad).ravel()


def _rows_to_csr(rows: Sequence[Sequence[str]], vocab: dict[str, int]) -> sparse.csr_matrix:
    indptr, indices = [0], []
    for names in rows:
        ids = sorted({vocab[n] for n in names if n in vocab})
        indices.extend(ids)
        indptr.append(len(indices))
    data = np.ones(len(indices))
    return sparse.csr_matrix((data, indices, indptr), shape=(len(rows), len(vocab)))


class TrainResult(NamedTuple):
    model: LexicalScorerModel
    losses: list[float]


def _vocabulary(model: LexicalScorerModel, paragraphs: Iterable[Paragraph]) -> dict[str, int]:
    names = set(model.weights)
    for p in paragraphs:
        feats = ParagraphFeatures(p)
        for row in feats.kind:
            names.update(row)
        for cands in feats.spans.values():
            for _, row in cands:
                names.update(row)
    return {n: i for i, n in enumerate(sorted(names))}


def compile_dataset(model: LexicalScorerModel, dataset, hard: HardConstraintConfig):
    """Vocabulary, weight vector and compiled examples; validates every gold grid."""
    records = []
    for paragraph, initial, grid in dataset:
        if grid is None:
            raise GoldPathPruned("training example has no gold grid", paragraph.id)
        gold = sequence_from_grid(grid)
        bad = violations(gold, paragraph, initial, hard)
        if bad:
            v = bad[0]
            raise GoldPathPruned(f"gold violates {v.rule} at step {v.step} for {v.entity!r}: {v.message}",
                                 paragraph.id, v.step)
        records.append((paragraph, initial, gold))
    vocab = _vocabulary(model, [r[0] for r in records])
    w = np.zeros(len(vocab))
    for name, value in model.weights.items():
        w[vocab[name]] = value
    return vocab, w, [_Compiled(p, i, g, vocab) for p, i, g in records]


def train(model: LexicalScorerModel, dataset: Sequence[tuple[Paragraph, Sequence[EntityState], Grid]],
          priors: Optional[PriorTable] = None, hard: Optional[HardConstraintConfig] = None,
          config: Optional[TrainConfig] = None, lam: float = 1.0, use_soft: bool = True,
          on_epoch=None) -> TrainResult:
    """Stochastic gradient descent on the gold-path loss, one paragraph per update."""
    config = config or TrainConfig()
    hard = hard or HardConstraintConfig()
    vocab, w, examples = compile_dataset(model, dataset, hard)
    if config.epochs == 0 or not examples:
        return TrainResult(model.copy(), [])
    rng = np.random.default_rng(config.seed)
    losses = []
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for i in rng.permutation(len(examples)):
            ex = examples[i]
            value, grad = ex.loss_grad(w, priors, lam, hard, use_soft)
            epoch_loss += value
            w -= config.learning_rate * grad
        losses.append(epoch_loss / len(examples))
        log.debug("epoch %d mean loss %.6f", epoch + 1, losses[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, losses[-1])
    names = sorted(vocab, key=vocab.get)
    weights = {n: float(w[i]) for i, n in enumerate(names) if w[i] != 0.0}
    return TrainResult(LexicalScorerModel(weights), losses)
