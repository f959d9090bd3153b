"""File formats: datasets, predictions, rulebases, frames, prior tables, models.

Every file is UTF-8 with LF line endings and starts with a format/version
header. JSON-lines files carry ``{"format": ..., "version": 1}`` on their
first line; tab-separated files carry ``# <format> v1`` (optionally followed by
tab-separated ``key=value`` fields) and then a column header row.
Parsers reject malformed input with :class:`SchemaError` carrying line and
field coordinates; they never repair it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence

from .core import (
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
    grid_from_sequence,
)
from .errors import DimensionError, SchemaError
from .fileio import atomic_write
from .priors import FrameRecord, PriorTable, Rule, count_items
from .scorer import FORMAT_VERSION, LexicalScorerModel, _jsonl

DATASET_FORMAT = "procstate.dataset"
FRAMES_FORMAT = "procstate.frames"
PREDICTIONS_FORMAT = "procstate.predictions"
RULEBASE_FORMAT = "procstate.rulebase"
PRIORS_FORMAT = "procstate.priors"

PREDICTION_COLUMNS = ("paragraph_id", "sentence_index", "entity_id", "kind",
                      "before_location", "after_location")
RULEBASE_COLUMNS = ("verb_lemma", "required_roles", "target_role", "change_kind")
PRIOR_COLUMNS = ("topic", "entity_lemma", "change_kind", "count")


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return text.split("\n")


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

def parse_cell(cell: Any, line: Optional[int] = None, field: Optional[str] = None) -> EntityState:
    if not isinstance(cell, str) or not cell.strip():
        raise SchemaError(f"state cell must be a non-empty string, got {cell!r}", line=line, field=field)
    cell = cell.strip()
    if cell == "-":
        return NONEXISTENT
    if cell == "?":
        return EntityState(UNKNOWN)
    return EntityState(Location(cell))


def format_cell(state: EntityState) -> str:
    return str(state)


class Record(NamedTuple):
    paragraph: Paragraph
    initial: tuple[EntityState, ...]
    grid: Optional[Grid]


@dataclass
class Dataset:
    records: list[Record]

    def __post_init__(self):
        ids = [r.paragraph.id for r in self.records]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise SchemaError(f"duplicate paragraph ids: {', '.join(dupes)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def paragraphs(self) -> dict[str, Paragraph]:
        return {r.paragraph.id: r.paragraph for r in self.records}

    @property
    def gold_grids(self) -> dict[str, Grid]:
        return {r.paragraph.id: r.grid for r in self.records if r.grid is not None}

    def get(self, pid: str) -> Record:
        for r in self.records:
            if r.paragraph.id == pid:
                return r
        raise KeyError(pid)


def _entity(obj, line, where) -> Entity:
    if isinstance(obj, str):
        return Entity(obj, (obj,))
    if isinstance(obj, dict) and isinstance(obj.get("id"), str):
        mentions = obj.get("mentions", [obj["id"]])
        if not isinstance(mentions, list) or not all(isinstance(m, str) and m.strip() for m in mentions):
            raise SchemaError("mentions must be a list of non-empty strings", line=line, field=where)
        try:
            return Entity(obj["id"], tuple(mentions))
        except ValueError as exc:
            raise SchemaError(str(exc), line=line, field=where) from None
    raise SchemaError("entity must be a string or {id, mentions}", line=line, field=where)


def parse_record(obj: Mapping, line: Optional[int] = None) -> Record:
    for key, typ in (("id", str), ("topic", str), ("sentences", list), ("entities", list)):
        if not isinstance(obj.get(key), typ):
            raise SchemaError(f"missing or mistyped {key!r}", line=line, field=key)
    for i, s in enumerate(obj["sentences"]):
        if not isinstance(s, str) or not s.strip():
            raise SchemaError("sentences must be non-empty strings", line=line, field=f"sentences[{i}]")
    entities = tuple(_entity(e, line, f"entities[{i}]") for i, e in enumerate(obj["entities"]))
    try:
        paragraph = Paragraph(obj["id"], obj["topic"],
                              tuple(Sentence(i, s) for i, s in enumerate(obj["sentences"], start=1)),
                              entities)
    except ValueError as exc:
        raise SchemaError(str(exc), line=line) from None
    n_e = paragraph.n_entities
    if "states" in obj:
        states = obj["states"]
        if not isinstance(states, list) or not all(isinstance(r, list) for r in states):
            raise SchemaError("states must be a list of rows", line=line, field="states")
        if len(states) != paragraph.n_steps + 1:
            raise DimensionError(f"{paragraph.n_steps} sentences need {paragraph.n_steps + 1} state rows, "
                                 f"found {len(states)}", line=line, field="states")
        rows = []
        for t, row in enumerate(states):
            if len(row) != n_e:
                raise DimensionError(f"state row {t} has {len(row)} cells for {n_e} entities",
                                     line=line, field=f"states[{t}]")
            rows.append(tuple(parse_cell(c, line, f"states[{t}][{j}]") for j, c in enumerate(row)))
        grid = Grid(tuple(rows))
        return Record(paragraph, grid.rows[0], grid)
    initial = obj.get("initial")
    if not isinstance(initial, list):
        raise SchemaError("record needs 'states' or 'initial'", line=line, field="states")
    if len(initial) != n_e:
        raise DimensionError(f"initial row has {len(initial)} cells for {n_e} entities",
                             line=line, field="initial")
    return Record(paragraph, tuple(parse_cell(c, line, f"initial[{j}]") for j, c in enumerate(initial)), None)


def parse_dataset(path) -> Dataset:
    return Dataset([parse_record(obj, ln) for ln, obj in _jsonl(_read_lines(path), DATASET_FORMAT)])


def record_to_json(record: Record) -> dict:
    p = record.paragraph
    out = {"id": p.id, "topic": p.topic, "sentences": [s.text for s in p.sentences],
           "entities": [{"id": e.id, "mentions": list(e.mentions)} for e in p.entities]}
    if record.grid is not None:
        out["states"] = [[format_cell(c) for c in row] for row in record.grid.rows]
    else:
        out["initial"] = [format_cell(c) for c in record.initial]
    return out


def dumps_dataset(records: Iterable[Record]) -> str:
    lines = [json.dumps({"format": DATASET_FORMAT, "version": FORMAT_VERSION})]
    lines += [json.dumps(record_to_json(r), ensure_ascii=False) for r in records]
    return "\n".join(lines) + "\n"


def write_dataset(path, records: Iterable[Record]) -> None:
    atomic_write(path, dumps_dataset(records))


# ---------------------------------------------------------------------------
# tab-separated helpers
# ---------------------------------------------------------------------------

def _tsv_header(fmt: str, fields: Mapping[str, Any] = ()) -> str:
    parts = [f"# {fmt} v{FORMAT_VERSION}"] + [f"{k}={v}" for k, v in dict(fields).items()]
    return "\t".join(parts)


def _parse_tsv(lines: Sequence[str], fmt: str, columns: Sequence[str]):
    """Returns (header fields, [(line number, cells)]) of a versioned TSV body."""
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise SchemaError("empty file: missing format header", line=1)
    head = lines[0].split("\t")
    if head[0] != f"# {fmt} v{FORMAT_VERSION}":
        raise SchemaError(f"expected header '# {fmt} v{FORMAT_VERSION}', found {head[0]!r}", line=1,
                          field="format")
    fields = {}
    for part in head[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise SchemaError(f"header field {part!r} is not key=value", line=1)
        fields[key] = value
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition(" ")
        fields[key] = value
        i += 1
    if i >= len(lines) or tuple(lines[i].split("\t")) != tuple(columns):
        raise SchemaError(f"expected column header {'/'.join(columns)}", line=i + 1)
    rows = []
    for n, ln in enumerate(lines[i + 1:], start=i + 2):
        cells = ln.split("\t")
        if len(cells) != len(columns):
            raise SchemaError(f"expected {len(columns)} columns, found {len(cells)}", line=n)
        rows.append((n, cells))
    return fields, rows


def _check_cell_text(text: str, what: str) -> str:
    if "\t" in text or "\n" in text or "\r" in text:
        raise SchemaError(f"{what} {text!r} contains a tab or newline")
    return text


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

class PredictedParagraph(NamedTuple):
    entity_ids: tuple[str, ...]
    sequence: ActionSequence


def _slot_text(loc: Optional[Location]) -> str:
    if loc is None:
        return "-"
    if loc.text in ("-", "?"):
        raise SchemaError(f"span text {loc.text!r} collides with a reserved marker")
    return _check_cell_text(str(loc), "location")


def dumps_predictions(items: Iterable[tuple[str, Sequence[str], ActionSequence]],
                      config: Optional[Mapping] = None) -> str:
    lines = [_tsv_header(PREDICTIONS_FORMAT)]
    if config is not None:
        lines.append("# config " + json.dumps(config, sort_keys=True))
    lines.append("\t".join(PREDICTION_COLUMNS))
    for pid, entity_ids, seq in items:
        _check_cell_text(pid, "paragraph id")
        for t, step in enumerate(seq.steps, start=1):
            if len(step) != len(entity_ids):
                raise SchemaError(f"paragraph {pid!r} step {t} has {len(step)} changes for "
                                  f"{len(entity_ids)} entities")
            for eid, change in zip(entity_ids, step.changes):
                lines.append("\t".join((pid, str(t), _check_cell_text(eid, "entity id"), change.kind.name,
                                        _slot_text(change.before), _slot_text(change.after))))
    return "\n".join(lines) + "\n"


def write_predictions(path, items, config: Optional[Mapping] = None) -> None:
    atomic_write(path, dumps_predictions(items, config))


def _slot(text: str, line: int, field: str) -> Optional[Location]:
    if text == "-":
        return None
    if text == "?":
        return UNKNOWN
    if not text.strip():
        raise SchemaError("empty location", line=line, field=field)
    return Location(text)


def loads_predictions(text: str) -> dict[str, PredictedParagraph]:
    _, rows = _parse_tsv(text.split("\n"), PREDICTIONS_FORMAT, PREDICTION_COLUMNS)
    grouped: dict[str, dict[int, list]] = {}
    for n, (pid, sid, eid, kind, before, after) in rows:
        try:
            t = int(sid)
        except ValueError:
            raise SchemaError(f"sentence_index {sid!r} is not an integer", line=n, field="sentence_index") from None
        if kind not in Kind.__members__:
            raise SchemaError(f"unknown kind token {kind!r}", line=n, field="kind")
        try:
            change = StateChange(Kind[kind], _slot(before, n, "before_location"), _slot(after, n, "after_location"))
        except ValueError as exc:
            raise SchemaError(str(exc), line=n, field="kind") from None
        grouped.setdefault(pid, {}).setdefault(t, []).append((n, eid, change))
    out = {}
    for pid, steps in grouped.items():
        if sorted(steps) != list(range(1, len(steps) + 1)):
            raise SchemaError(f"paragraph {pid!r} sentence indices are not 1..{len(steps)}",
                              line=min(r[0] for s in steps.values() for r in s), field="sentence_index")
        ids = tuple(e for _, e, _ in steps[1])
        if len(set(ids)) != len(ids):
            raise SchemaError(f"paragraph {pid!r} repeats an entity", line=steps[1][0][0], field="entity_id")
        seq = []
        for t in range(1, len(steps) + 1):
            row = steps[t]
            if tuple(e for _, e, _ in row) != ids:
                raise SchemaError(f"paragraph {pid!r} sentence {t} lists different entities",
                                  line=row[0][0], field="entity_id")
            seq.append(StepAction(tuple(c for _, _, c in row)))
        out[pid] = PredictedParagraph(ids, ActionSequence(tuple(seq)))
    return out


def read_predictions(path) -> dict[str, PredictedParagraph]:
    with open(path, encoding="utf-8") as fh:
        return loads_predictions(fh.read())


def aligned_sequence(pred: PredictedParagraph, record: Record) -> ActionSequence:
    """Reorder a predicted sequence into the paragraph's entity order."""
    pid = record.paragraph.id
    ids = record.paragraph.entity_ids
    if sorted(pred.entity_ids) != sorted(ids) or len(pred.sequence) != record.paragraph.n_steps:
        raise DimensionError(f"prediction for {pid!r} does not match the paragraph's entities/sentences",
                             field="paragraph_id")
    order = [pred.entity_ids.index(e) for e in ids]
    return ActionSequence(tuple(StepAction(tuple(step.changes[i] for i in order)) for step in pred.sequence))


def prediction_grids(predictions: Mapping[str, PredictedParagraph], dataset: Dataset) -> dict[str, Grid]:
    """Replay predicted sequences from the dataset's initial rows."""
    out = {}
    for pid, pred in predictions.items():
        try:
            record = dataset.get(pid)
        except KeyError:
            raise SchemaError(f"prediction for unknown paragraph {pid!r}", field="paragraph_id") from None
        out[pid] = grid_from_sequence(record.initial, aligned_sequence(pred, record), strict=False)
    return out


# ---------------------------------------------------------------------------
# rulebase, frames, prior tables
# ---------------------------------------------------------------------------

def read_rulebase(path) -> list[Rule]:
    _, rows = _parse_tsv(_read_lines(path), RULEBASE_FORMAT, RULEBASE_COLUMNS)
    rules = []
    for n, (verb, roles, target, kind) in rows:
        if kind not in ("MOVE", "CREATE", "DESTROY"):
            raise SchemaError(f"change_kind must be MOVE, CREATE or DESTROY, got {kind!r}", line=n,
                              field="change_kind")
        role_set = frozenset(r.strip() for r in roles.split(",") if r.strip())
        try:
            rules.append(Rule(verb.strip(), role_set, target.strip(), Kind[kind]))
        except ValueError as exc:
            raise SchemaError(str(exc), line=n) from None
    return rules


def dumps_rulebase(rules: Iterable[Rule]) -> str:
    lines = [_tsv_header(RULEBASE_FORMAT), "\t".join(RULEBASE_COLUMNS)]
    for r in rules:
        lines.append("\t".join((r.verb_lemma, ",".join(sorted(r.required_roles)), r.target_role,
                                r.change_kind.name)))
    return "\n".join(lines) + "\n"


def iter_frames(path) -> Iterator[Any]:
    """Stream frame records; malformed ones are yielded as None for the builder to tally."""
    with open(path, encoding="utf-8") as fh:
        first = True
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                if first:
                    raise SchemaError("frames file must start with a format header", line=n) from None
                yield None
                continue
            if first:
                first = False
                if not isinstance(obj, dict) or obj.get("format") != FRAMES_FORMAT \
                        or obj.get("version") != FORMAT_VERSION:
                    raise SchemaError(f"expected format {FRAMES_FORMAT!r} v{FORMAT_VERSION}", line=n,
                                      field="format")
                continue
            yield _frame(obj)
    if first:
        raise SchemaError("empty file: missing format header", line=1)


def _frame(obj):
    try:
        args = []
        for a in obj["args"]:
            if isinstance(a, dict):
                args.append((a["role"], a["text"]))
            else:
                role, text = a
                args.append((role, text))
        return FrameRecord(obj["topic"], obj["verb_lemma"], tuple(args))
    except (KeyError, TypeError, ValueError):
        return None


def dumps_frames(frames: Iterable[FrameRecord]) -> str:
    lines = [json.dumps({"format": FRAMES_FORMAT, "version": FORMAT_VERSION})]
    for f in frames:
        lines.append(json.dumps({"topic": f.topic, "verb_lemma": f.verb_lemma,
                                 "args": [{"role": r, "text": t} for r, t in f.args]}, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def dumps_priors(table: PriorTable, config: Optional[Mapping] = None) -> str:
    lines = [_tsv_header(PRIORS_FORMAT, {"x0": repr(float(table.x0)),
                                         "none_prior": repr(float(table.none_prior)),
                                         "skipped": table.skipped})]
    if config is not None:
        lines.append("# config " + json.dumps(config, sort_keys=True))
    lines.append("\t".join(PRIOR_COLUMNS))
    for topic, lemma, kind, count in count_items(table.counts):
        lines.append("\t".join((_check_cell_text(topic, "topic"), lemma, kind.name, str(count))))
    return "\n".join(lines) + "\n"


def write_priors(path, table: PriorTable, config: Optional[Mapping] = None) -> None:
    atomic_write(path, dumps_priors(table, config))


def read_priors(path) -> PriorTable:
    fields, rows = _parse_tsv(_read_lines(path), PRIORS_FORMAT, PRIOR_COLUMNS)
    try:
        x0 = float(fields["x0"])
        none_prior = float(fields["none_prior"])
        skipped = int(fields.get("skipped", 0))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"header needs numeric x0 and none_prior ({exc})", line=1) from None
    counts = {}
    for n, (topic, lemma, kind, count) in rows:
        if kind not in ("MOVE", "CREATE", "DESTROY"):
            raise SchemaError(f"bad change_kind {kind!r}", line=n, field="change_kind")
        try:
            c = int(count)
        except ValueError:
            raise SchemaError(f"count {count!r} is not an integer", line=n, field="count") from None
        if c < 0:
            raise SchemaError("count must be non-negative", line=n, field="count")
        key = (topic, lemma, Kind[kind])
        if key in counts:
            raise SchemaError(f"duplicate key {topic}/{lemma}/{kind}", line=n)
        counts[key] = c
    try:
        return PriorTable(counts, x0, none_prior, skipped)
    except ValueError as exc:
        raise SchemaError(str(exc), line=1) from None


def write_model(path, model: LexicalScorerModel, extra: Optional[Mapping] = None) -> None:
    obj = model.to_json()
    if extra:
        obj.update(extra)
    atomic_write(path, json.dumps(obj, indent=1) + "\n")


def read_model(path) -> LexicalScorerModel:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return LexicalScorerModel.from_json(obj)
