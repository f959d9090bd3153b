"""Run configuration: one JSON document merging every component's settings.

Example (all keys optional, defaults shown)::

    {
      "constraints": {"cs1": true, "cs2": true, "cs3": true,
                      "d1": true, "d2": true, "d3": true,
                      "max_toggles": 1, "max_entities_frac": 0.5,
                      "max_sentences_frac": 0.5},
      "decoder": {"beam": 10, "lambda": 0.5, "use_hard": true,
                  "use_soft": true, "max_entities_for_exact": 4},
      "priors": {"x0": 3.0, "none_prior": 0.5},
      "train": {"epochs": 20, "learning_rate": 0.1},
      "tune": {"lambda": [0.0, 0.1, ..., 1.0], "x0": [], "max_toggles": [],
               "max_entities_frac": [], "max_sentences_frac": []},
      "seed": 0,
      "jobs": 1
    }

An empty tune list means "keep the current value". Unknown keys are
rejected so typos never pass silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from .constraints import HardConstraintConfig
from .decoder import DecoderConfig
from .errors import SchemaError
from .scorer import TrainConfig

DEFAULT_LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))

_CONSTRAINT_KEYS = {
    "cs1": "enable_cs1", "cs2": "enable_cs2", "cs3": "enable_cs3",
    "d1": "enable_d1", "d2": "enable_d2", "d3": "enable_d3",
    "max_toggles": "max_toggles",
    "max_entities_frac": "max_entities_changed_per_sentence",
    "max_sentences_frac": "max_sentences_changed_per_entity",
}
_CONSTRAINT_TYPES = {k: bool for k in ("cs1", "cs2", "cs3", "d1", "d2", "d3")}
_CONSTRAINT_TYPES.update(max_toggles=int, max_entities_frac=float, max_sentences_frac=float)
_DECODER_KEYS = {"beam": "beam_width", "lambda": "lam", "use_hard": "use_hard",
                 "use_soft": "use_soft", "max_entities_for_exact": "max_entities_for_exact"}
_TUNE_KEYS = ("lambda", "x0", "max_toggles", "max_entities_frac", "max_sentences_frac")


@dataclass(frozen=True)
class TuneGrid:
    lam: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    x0: tuple[float, ...] = ()
    max_toggles: tuple[int, ...] = ()
    max_entities_frac: tuple[float, ...] = ()
    max_sentences_frac: tuple[float, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    hard: HardConstraintConfig = field(default_factory=HardConstraintConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    x0: float = 3.0
    none_prior: float = 0.5
    seed: int = 0
    jobs: int = 1
    tune: TuneGrid = field(default_factory=TuneGrid)

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    def to_json(self) -> dict:
        h, d = self.hard, self.decoder
        return {
            "constraints": {k: getattr(h, v) for k, v in _CONSTRAINT_KEYS.items()},
            "decoder": {k: getattr(d, v) for k, v in _DECODER_KEYS.items()},
            "priors": {"x0": self.x0, "none_prior": self.none_prior},
            "train": {"epochs": self.train.epochs, "learning_rate": self.train.learning_rate},
            "tune": {"lambda": list(self.tune.lam), "x0": list(self.tune.x0),
                     "max_toggles": list(self.tune.max_toggles),
                     "max_entities_frac": list(self.tune.max_entities_frac),
                     "max_sentences_frac": list(self.tune.max_sentences_frac)},
            "seed": self.seed,
            "jobs": self.jobs,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def effective(self) -> dict:
        """The settings that determine outputs (worker count excluded)."""
        out = self.to_json()
        del out["jobs"]
        return out


def _section(obj: Mapping, name: str, allowed) -> dict:
    sec = obj.get(name, {})
    if not isinstance(sec, dict):
        raise SchemaError(f"config section {name!r} must be an object", field=name)
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown config keys in {name!r}: {', '.join(unknown)}", field=name)
    return sec


def _typed(value, kind, where):
    if kind is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{where} must be true or false", field=where)
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where} must be a number", field=where)
    if kind is int:
        if int(value) != value:
            raise SchemaError(f"{where} must be an integer", field=where)
        return int(value)
    return float(value)


def config_from_json(obj: Mapping, base: Optional[RunConfig] = None) -> RunConfig:
    """Overlay ``obj`` on ``base`` (defaults when None)."""
    base = base or RunConfig()
    if not isinstance(obj, dict):
        raise SchemaError("config must be a JSON object")
    unknown = sorted(set(obj) - {"constraints", "decoder", "priors", "train", "tune", "seed", "jobs"})
    if unknown:
        raise SchemaError(f"unknown config keys: {', '.join(unknown)}")
    try:
        sec = _section(obj, "constraints", _CONSTRAINT_KEYS)
        hard = replace(base.hard, **{_CONSTRAINT_KEYS[k]: _typed(v, _CONSTRAINT_TYPES[k], f"constraints.{k}")
                                     for k, v in sec.items()})
        sec = _section(obj, "decoder", _DECODER_KEYS)
        kinds = {"beam": int, "lambda": float, "use_hard": bool, "use_soft": bool, "max_entities_for_exact": int}
        decoder = replace(base.decoder, **{_DECODER_KEYS[k]: _typed(v, kinds[k], f"decoder.{k}")
                                           for k, v in sec.items()})
        sec = _section(obj, "priors", ("x0", "none_prior"))
        x0 = _typed(sec.get("x0", base.x0), float, "priors.x0")
        none_prior = _typed(sec.get("none_prior", base.none_prior), float, "priors.none_prior")
        if not 0.0 < none_prior < 1.0:
            raise SchemaError("priors.none_prior must lie in (0, 1)", field="priors.none_prior")
        sec = _section(obj, "train", ("epochs", "learning_rate"))
        seed = _typed(obj.get("seed", base.seed), int, "seed")
        train = replace(base.train,
                        epochs=_typed(sec.get("epochs", base.train.epochs), int, "train.epochs"),
                        learning_rate=_typed(sec.get("learning_rate", base.train.learning_rate), float,
                                             "train.learning_rate"),
                        seed=seed)
        sec = _section(obj, "tune", _TUNE_KEYS)
        grids = {}
        for k in _TUNE_KEYS:
            if k in sec:
                if not isinstance(sec[k], list):
                    raise SchemaError(f"tune.{k} must be a list", field=f"tune.{k}")
                kind = int if k == "max_toggles" else float
                grids[k] = tuple(_typed(v, kind, f"tune.{k}") for v in sec[k])
        tune = replace(base.tune, **{("lam" if k == "lambda" else k): v for k, v in grids.items()})
        jobs = _typed(obj.get("jobs", base.jobs), int, "jobs")
        return RunConfig(hard, decoder, train, x0, none_prior, seed, jobs, tune)
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(f"invalid config: {exc}") from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in config: {exc.msg}", line=exc.lineno) from None
    return config_from_json(obj)
