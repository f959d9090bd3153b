"""Command-line interface: decode, train, eval, priors, lint, tune.

Exit codes: 0 success, 2 schema/config errors, 3 constraint or data
inconsistencies (including lint findings).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

from .config import RunConfig, load_config
from .constraints import HardConstraintConfig, violations
from .core import grid_from_sequence, sequence_from_grid
from .decoder import beam_search
from .errors import ProcStateError, SchemaError
from .evaluation import evaluate
from .fileio import atomic_write
from .ingest import (
    Dataset,
    aligned_sequence,
    dumps_predictions,
    dumps_priors,
    iter_frames,
    parse_dataset,
    prediction_grids,
    read_model,
    read_predictions,
    read_priors,
    read_rulebase,
    write_model,
)
from .priors import build_priors
from .scorer import LexicalScorerModel, load_logits, score, train

log = logging.getLogger("procstate")


def _pmap(fn, items: list, jobs: int) -> list:
    """Ordered map, in worker processes when ``jobs`` > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _decode_one(task):
    paragraph, initial, logits, priors, hard, dconf = task
    result = beam_search(paragraph, initial, logits, priors, hard, dconf)
    return result.sequence, result.score


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    dec, train_cfg = cfg.decoder, cfg.train
    try:
        if args.beam is not None:
            dec = replace(dec, beam_width=args.beam)
        if args.lam is not None:
            dec = replace(dec, lam=args.lam)
        if args.no_hard:
            dec = replace(dec, use_hard=False)
        if args.no_soft:
            dec = replace(dec, use_soft=False)
        seed = cfg.seed if args.seed is None else args.seed
        return replace(cfg, decoder=dec, train=replace(train_cfg, seed=seed), seed=seed,
                       x0=cfg.x0 if args.x0 is None else args.x0,
                       jobs=cfg.jobs if args.jobs is None else args.jobs)
    except ValueError as exc:
        raise SchemaError(f"invalid option: {exc}") from None


def _search_hard(cfg: RunConfig) -> HardConstraintConfig:
    return cfg.hard if cfg.decoder.use_hard else HardConstraintConfig.disabled()


def _load_priors(path, cfg: RunConfig):
    if not path:
        return None
    return read_priors(path).with_params(x0=cfg.x0, none_prior=cfg.none_prior)


def _logits_for(args, dataset: Dataset) -> dict:
    if bool(args.logits) == bool(args.model):
        raise SchemaError("give exactly one of --logits or --model")
    if args.logits:
        table = load_logits(args.logits, dataset.paragraphs)
        missing = [r.paragraph.id for r in dataset if r.paragraph.id not in table]
        if missing:
            raise SchemaError(f"no logits for paragraphs: {', '.join(missing)}", field="paragraph_id")
        return table
    model = read_model(args.model)
    return {r.paragraph.id: score(model, r.paragraph) for r in dataset}


def decode_dataset(dataset: Dataset, logits: dict, priors, cfg: RunConfig) -> list:
    """[(paragraph id, entity ids, sequence, score)] in dataset order."""
    hard = _search_hard(cfg)
    tasks = [(r.paragraph, r.initial, logits[r.paragraph.id], priors, hard, cfg.decoder) for r in dataset]
    results = _pmap(_decode_one, tasks, cfg.jobs)
    return [(r.paragraph.id, r.paragraph.entity_ids, seq, sc) for r, (seq, sc) in zip(dataset, results)]


def _header(cfg: RunConfig) -> str:
    return "# config " + json.dumps(cfg.effective(), sort_keys=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_decode(args, cfg: RunConfig) -> int:
    dataset = parse_dataset(args.data)
    decoded = decode_dataset(dataset, _logits_for(args, dataset), _load_priors(args.priors, cfg), cfg)
    atomic_write(args.out, dumps_predictions([(p, e, s) for p, e, s, _ in decoded], cfg.effective()))
    lines = ["# procstate.scores v1", _header(cfg), "paragraph_id\tscore"]
    lines += [f"{pid}\t{sc!r}" for pid, _, _, sc in decoded]
    text = "\n".join(lines) + "\n"
    if args.scores:
        atomic_write(args.scores, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    dataset = parse_dataset(args.data)
    priors = _load_priors(args.priors, cfg)
    model = read_model(args.init) if args.init else LexicalScorerModel()
    examples = [(r.paragraph, r.initial, r.grid) for r in dataset]
    result = train(model, examples, priors, _search_hard(cfg), cfg.train,
                   lam=cfg.decoder.lam, use_soft=cfg.decoder.use_soft)
    write_model(args.out, result.model, {"config": cfg.effective(), "losses": result.losses})
    lines = ["# procstate.losses v1", _header(cfg), "epoch\tmean_loss"]
    lines += [f"{i}\t{v!r}" for i, v in enumerate(result.losses, start=1)]
    text = "\n".join(lines) + "\n"
    if args.trace:
        atomic_write(args.trace, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    dataset = parse_dataset(args.gold)
    predicted = prediction_grids(read_predictions(args.pred), dataset)
    report = evaluate(dataset.gold_grids, predicted, dataset.paragraphs)
    sys.stdout.write(report.to_text() + "\n")
    if args.out:
        doc = {"format": "procstate.report", "version": 1, "config": cfg.effective(),
               "scores": report.to_json()}
        atomic_write(args.out, json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_priors(args, cfg: RunConfig) -> int:
    rules = read_rulebase(args.rulebase)
    table = build_priors(iter_frames(args.frames), rules, cfg.x0, cfg.none_prior)
    if table.skipped:
        log.warning("skipped %d malformed frame records", table.skipped)
    atomic_write(args.out, dumps_priors(table, cfg.effective()))
    return 0


def cmd_lint(args, cfg: RunConfig) -> int:
    dataset = parse_dataset(args.data)
    if args.pred:
        preds = read_predictions(args.pred)
        unknown = sorted(set(preds) - set(dataset.paragraphs))
        if unknown:
            raise SchemaError(f"predictions for unknown paragraphs: {', '.join(unknown)}", field="paragraph_id")
        seqs = {pid: aligned_sequence(p, dataset.get(pid)) for pid, p in preds.items()}
    else:
        seqs = {r.paragraph.id: sequence_from_grid(r.grid) for r in dataset if r.grid is not None}
    lines = ["# procstate.lint v1", _header(cfg), "paragraph_id\tstep\tentity_id\trule\tmessage"]
    found = 0
    for r in dataset:
        pid = r.paragraph.id
        if pid not in seqs:
            continue
        for v in violations(seqs[pid], r.paragraph, r.initial, cfg.hard):
            lines.append(f"{pid}\t{v.step}\t{v.entity}\t{v.rule}\t{v.message}")
            found += 1
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    log.info("%d violations", found)
    return 3 if found else 0


def tune_grid(cfg: RunConfig) -> list[RunConfig]:
    """Every candidate configuration, ordered so earlier entries win ties."""
    g, h = cfg.tune, cfg.hard
    axes = [sorted(g.lam) or [cfg.decoder.lam],
            sorted(g.x0) or [cfg.x0],
            sorted(g.max_toggles) or [h.max_toggles],
            sorted(g.max_entities_frac) or [h.max_entities_changed_per_sentence],
            sorted(g.max_sentences_frac) or [h.max_sentences_changed_per_entity]]
    out = []
    for lam, x0, tog, ef, sf in itertools.product(*axes):
        out.append(replace(cfg, x0=x0, decoder=replace(cfg.decoder, lam=lam),
                           hard=replace(h, max_toggles=tog, max_entities_changed_per_sentence=ef,
                                        max_sentences_changed_per_entity=sf)))
    return out


def tune(dataset: Dataset, logits: dict, table, cfg: RunConfig) -> tuple[RunConfig, list]:
    """Grid search by dev macro-F1; only strict improvements replace the incumbent."""
    gold = dataset.gold_grids
    if not gold:
        raise SchemaError("tuning needs a dataset with gold grids")
    best, best_f1, trace = None, -1.0, []
    for cand in tune_grid(cfg):
        priors = table.with_params(x0=cand.x0, none_prior=cand.none_prior) if table is not None else None
        decoded = decode_dataset(dataset, logits, priors, cand)
        grids = {pid: grid_from_sequence(r.initial, seq, strict=False)
                 for (pid, _, seq, _), r in zip(decoded, dataset)}
        f1 = evaluate(gold, grids, dataset.paragraphs).macro_f1
        trace.append((cand, f1))
        if f1 > best_f1:
            best, best_f1 = cand, f1
    return best, trace


def cmd_tune(args, cfg: RunConfig) -> int:
    dataset = parse_dataset(args.data)
    table = read_priors(args.priors) if args.priors else None
    best, trace = tune(dataset, _logits_for(args, dataset), table, cfg)
    lines = ["lambda\tx0\tmax_toggles\tmax_entities_frac\tmax_sentences_frac\tmacro_f1"]
    for c, f1 in trace:
        h = c.hard
        lines.append(f"{c.decoder.lam!r}\t{c.x0!r}\t{h.max_toggles}\t{h.max_entities_changed_per_sentence!r}\t"
                     f"{h.max_sentences_changed_per_entity!r}\t{f1!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    atomic_write(args.out, best.dumps())
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (default from config, 1)")
    common.add_argument("--no-hard", action="store_true", help="disable hard constraints in search")
    common.add_argument("--no-soft", action="store_true", help="disable prior mixing")
    common.add_argument("--beam", type=int, help="beam width")
    common.add_argument("--lambda", dest="lam", type=float, help="logit/prior mixing weight")
    common.add_argument("--x0", type=float, help="logistic midpoint of the priors")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="procstate", description="Constrained entity-state decoding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", parents=[common], help="decode a dataset into predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--logits")
    p.add_argument("--model")
    p.add_argument("--priors")
    p.add_argument("--out", required=True)
    p.add_argument("--scores", help="per-paragraph score file (default: stdout)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", parents=[common], help="train the lexical scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--priors")
    p.add_argument("--init", help="starting model file")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="loss trace file (default: stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score predictions against gold grids")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="structured report file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("priors", parents=[common], help="build a prior table from frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--rulebase", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("lint", parents=[common], help="audit gold grids or predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--pred")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("tune", parents=[common], help="grid-search hyperparameters on a dev set")
    p.add_argument("--data", required=True)
    p.add_argument("--logits")
    p.add_argument("--model")
    p.add_argument("--priors")
    p.add_argument("--out", required=True, help="best configuration (JSON)")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ProcStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
