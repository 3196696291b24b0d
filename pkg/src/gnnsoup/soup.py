"""Weight interpolation and greedy interpolation soups.

The greedy procedure sorts ingredients by recorded validation accuracy,
starts from the best one and, for every further ingredient, sweeps an
ascending alpha grid.  Each grid point is compared with the *current*
soup and accepted whenever validation accuracy does not drop, so the soup
can move several times within one sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Dataset
from .nn import Evaluator, Ingredient, ModelParams, accuracy_from_logits


class SoupError(ValueError):
    pass


@dataclass(frozen=True)
class SoupConfig:
    alpha_step: float = 0.01
    commit: str = "literal"  # "literal": accept in-loop; "best": best alpha per ingredient

    def __post_init__(self):
        if not 0.0 < self.alpha_step <= 1.0:
            raise ValueError("alpha_step must lie in (0, 1]")
        if self.commit not in ("literal", "best"):
            raise ValueError("commit must be 'literal' or 'best'")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, int(round(1.0 / self.alpha_step)) + 1)


@dataclass(frozen=True)
class LineageStep:
    ingredient: str
    alpha: float
    val_acc_after: float


@dataclass
class SoupState:
    params: ModelParams
    val_acc: float
    base: str
    lineage: list[LineageStep] = field(default_factory=list)
    init_fingerprint: str = ""
    parent: SoupState | None = None

    def as_ingredient(self) -> Ingredient:
        return Ingredient(self.params, None, self.val_acc, self.init_fingerprint, name=SOUP_ID)

    def lineage_records(self) -> list[dict]:
        return [{"ingredient": s.ingredient, "alpha": s.alpha, "val_acc_after": s.val_acc_after} for s in self.lineage]


SOUP_ID = "soup"


def interpolate(soup: ModelParams, cand: ModelParams, alpha: float) -> ModelParams:
    """``soup + alpha * (cand - soup)`` on every tensor; exact at the ends."""
    if soup.arch.structure() != cand.arch.structure():
        raise SoupError("cannot interpolate models with different architectures")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return soup.copy()
    if alpha == 1.0:
        return ModelParams(soup.arch, [w.copy() for w in cand.weights], [b.copy() for b in cand.biases])
    a = soup.dtype.type(alpha)

    def mix(s, c):
        return s + a * (c - s)

    return ModelParams(
        soup.arch,
        [mix(s, c) for s, c in zip(soup.weights, cand.weights)],
        [mix(s, c) for s, c in zip(soup.biases, cand.biases)],
    )


def sort_ingredients(ingredients: list[Ingredient]) -> list[Ingredient]:
    """Descending recorded val_acc; ties keep submission order."""
    order = sorted(range(len(ingredients)), key=lambda i: (-ingredients[i].val_acc, i))
    return [ingredients[i] for i in order]


def _check_compatible(ingredients: list[Ingredient]):
    if not ingredients:
        raise SoupError("need at least one ingredient")
    arch = ingredients[0].params.arch.structure()
    fps = {ing.init_fingerprint for ing in ingredients}
    if any(ing.params.arch.structure() != arch for ing in ingredients):
        raise SoupError("ingredients disagree on architecture")
    if len(fps) > 1:
        raise SoupError(f"ingredients come from different initialisations: {sorted(fps)}")


def greedy_soup(
    ingredients: list[Ingredient],
    dataset: Dataset | None = None,
    cfg: SoupConfig | None = None,
    evaluator: Evaluator | None = None,
    parent: SoupState | None = None,
) -> SoupState:
    """Greedy interpolation soup over ``ingredients`` (see module docstring)."""
    cfg = cfg or SoupConfig()
    _check_compatible(ingredients)
    first = ingredients[0].params
    ev = evaluator or Evaluator(dataset, first.arch, first.dtype)
    ranked = sort_ingredients(ingredients)
    best = ranked[0]
    soup = best.params.copy()
    acc = ev.split_accuracy(soup, "val")
    lineage: list[LineageStep] = []
    grid = cfg.grid()
    for ing in ranked[1:]:
        if cfg.commit == "literal":
            for alpha in grid:
                trial = interpolate(soup, ing.params, float(alpha))
                trial_acc = ev.split_accuracy(trial, "val")
                if trial_acc >= acc:
                    soup, acc = trial, trial_acc
                    if alpha > 0:
                        lineage.append(LineageStep(ing.name, float(alpha), acc))
        else:
            pick, pick_acc, pick_params = None, acc, None
            for alpha in grid[1:]:
                trial = interpolate(soup, ing.params, float(alpha))
                trial_acc = ev.split_accuracy(trial, "val")
                if trial_acc >= pick_acc:
                    pick, pick_acc, pick_params = float(alpha), trial_acc, trial
            if pick is not None:
                soup, acc = pick_params, pick_acc
                lineage.append(LineageStep(ing.name, pick, acc))
    return SoupState(soup, acc, best.name, lineage, best.init_fingerprint, parent)


def incremental_soup(
    state: SoupState | None,
    newly_completed: list[Ingredient],
    dataset: Dataset | None = None,
    cfg: SoupConfig | None = None,
    evaluator: Evaluator | None = None,
) -> SoupState | None:
    """Fold a batch of finished ingredients into the running soup; the
    current soup competes as one more ingredient, submitted first."""
    if not newly_completed:
        return state
    pool = ([state.as_ingredient()] if state is not None else []) + list(newly_completed)
    return greedy_soup(pool, dataset, cfg, evaluator, parent=state)


def replay(state: SoupState, ingredients: dict[str, Ingredient]) -> ModelParams:
    """Rebuild soup parameters from base and lineage."""

    def lookup(name):
        if name == SOUP_ID:
            if state.parent is None:
                raise SoupError("lineage refers to a parent soup that is not recorded")
            return replay(state.parent, ingredients)
        return ingredients[name].params

    params = lookup(state.base).copy()
    for step in state.lineage:
        params = interpolate(params, lookup(step.ingredient), step.alpha)
    return params


def uniform_soup(ingredients: list[Ingredient]) -> ModelParams:
    """Plain weight average (debug baseline)."""
    _check_compatible(ingredients)
    first = ingredients[0].params
    n = len(ingredients)
    w = [sum(ing.params.weights[i].astype(np.float64) for ing in ingredients) / n for i in range(len(first.weights))]
    b = [sum(ing.params.biases[i].astype(np.float64) for ing in ingredients) / n for i in range(len(first.biases))]
    return ModelParams(first.arch, [x.astype(first.dtype) for x in w], [x.astype(first.dtype) for x in b])


def ensemble_logits(ingredients: list[Ingredient], dataset: Dataset | None = None, evaluator: Evaluator | None = None) -> np.ndarray:
    if not ingredients:
        raise SoupError("need at least one ingredient")
    first = ingredients[0].params
    ev = evaluator or Evaluator(dataset, first.arch, first.dtype)
    total = None
    for ing in ingredients:
        lg = ev.logits(ing.params).astype(np.float64)
        total = lg if total is None else total + lg
    return total / len(ingredients)


def ensemble_eval(ingredients: list[Ingredient], dataset: Dataset, node_set, evaluator: Evaluator | None = None) -> float:
    """Accuracy of the logit-averaged ensemble (one forward per member)."""
    return accuracy_from_logits(ensemble_logits(ingredients, dataset, evaluator), dataset.labels, node_set)


def write_lineage(state: SoupState, path) -> Path:
    """lineage.json: a list of accepted steps; the base lives in the soup
    checkpoint header."""
    path = Path(path)
    path.write_text(json.dumps(state.lineage_records(), indent=1))
    return path
