"""Shared builders for tests: toy paragraphs, random instances, a small corpus."""

from __future__ import annotations

import numpy as np

from procstate.core import (
    NONEXISTENT,
    EntityState,
    Grid,
    Kind,
    Location,
    Paragraph,
)
from procstate.priors import PriorTable, head_lemma
from procstate.scorer import StepLogits

FILLER = ("the", "then", "slowly", "it", "goes", "into", "a", "place", "and", "stays")
NAMES = ("water", "salt", "sugar", "gas", "ice", "rock")


def state(cell: str) -> EntityState:
    if cell == "-":
        return NONEXISTENT
    if cell == "?":
        return EntityState.at()
    return EntityState.at(cell)


def grid(rows) -> Grid:
    return Grid(tuple(tuple(state(c) for c in row) for row in rows))


def hydro_paragraph() -> Paragraph:
    """The four-sentence hydroelectricity paragraph with its four tracked entities."""
    return Paragraph.build(
        "hydro", "hydroelectric electricity generation",
        ["Water flows downwards thanks to gravity .",
         "The moving water spins the turbines in the power plant .",
         "The turbines turn the generators .",
         "The generators spin , and produce electricity ."],
        [("water", "moving water"), ("turbine", "turbines"), ("generator", "generators"),
         ("electricity",)])


def hydro_grid() -> Grid:
    """water reaches the turbine at step 2; electricity appears at step 4."""
    return grid([
        ["?", "power plant", "power plant", "-"],
        ["?", "power plant", "power plant", "-"],
        ["turbine", "power plant", "power plant", "-"],
        ["turbine", "power plant", "power plant", "-"],
        ["turbine", "power plant", "power plant", "generator"],
    ])


def random_instance(rng: np.random.Generator, max_entities: int = 3, max_steps: int = 4,
                    scale: float = 2.0):
    """Paragraph, initial row, logits and a prior table drawn from ``rng``.

    Each entity is mentioned in each sentence with probability 0.6, so CS-3
    bites on some instances; about half of the entities start out existing.
    """
    n_e = int(rng.integers(1, max_entities + 1))
    n_t = int(rng.integers(1, max_steps + 1))
    names = list(NAMES[:n_e])
    texts = []
    for _ in range(n_t):
        words = list(rng.choice(FILLER, size=4))
        for name in names:
            if rng.random() < 0.6:
                words.insert(int(rng.integers(0, len(words) + 1)), name)
        texts.append(" ".join(words))
    paragraph = Paragraph.build(f"r{rng.integers(1 << 30)}", "topic", texts, names)
    initial = tuple(EntityState.at(Location("place")) if rng.random() < 0.5 else NONEXISTENT
                    for _ in names)
    values = rng.normal(0.0, scale, size=(n_t, n_e, 4))
    counts = {}
    for name in names:
        for kind in (Kind.MOVE, Kind.CREATE, Kind.DESTROY):
            c = int(rng.integers(0, 7))
            if c:
                counts[("topic", head_lemma(name), kind)] = c
    priors = PriorTable(counts, x0=float(rng.uniform(1, 5)), none_prior=float(rng.uniform(0.2, 0.8)))
    return paragraph, initial, StepLogits(values, {}, paragraph), priors


# (sentences, entities, grid rows) for the toy training corpus; one state
# change per sentence at most, so the default caps never bind.
TOY_CORPUS = [
    (["The sugar moves into the cup .", "The sugar dissolves in the water .", "The water is heated ."],
     ["water", "sugar"],
     [["cup", "bag"], ["cup", "cup"], ["cup", "-"], ["cup", "-"]]),
    (["The water boils in the pot .", "The gas forms above the pot .", "The gas moves into the air ."],
     ["gas", "water"],
     [["-", "pot"], ["-", "pot"], ["pot", "pot"], ["air", "pot"]]),
    (["The ice moves into the sun .", "The ice melts .", "The rock stays on the ground .",
      "The rock moves into the river ."],
     ["ice", "rock"],
     [["tray", "ground"], ["sun", "ground"], ["-", "ground"], ["-", "ground"], ["-", "river"]]),
    (["The water is warm .", "The salt dissolves .", "A crystal forms in the dish ."],
     ["salt", "crystal"],
     [["water", "-"], ["water", "-"], ["-", "-"], ["-", "dish"]]),
    (["The seed moves into the pot .", "A plant forms in the pot .", "The seed dissolves ."],
     ["seed", "plant"],
     [["soil", "-"], ["pot", "-"], ["pot", "pot"], ["-", "pot"]]),
]


def toy_corpus():
    """[(paragraph, initial row, gold grid)] for the toy training corpus."""
    out = []
    for i, (texts, names, rows) in enumerate(TOY_CORPUS):
        p = Paragraph.build(f"toy{i}", "change", texts, names)
        g = grid(rows)
        out.append((p, g.rows[0], g))
    return out
