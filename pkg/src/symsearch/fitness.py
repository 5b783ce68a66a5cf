"""Scoring boolean classifiers against a labelled feature matrix.

fitness = (1 - balanced_error) - lambda * node_count

For a hard (boolean) predictor the Mann-Whitney AUROC collapses to
(TPR + TNR) / 2, i.e. 1 - balanced_error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitnessError
from .expr import complexity, evaluate_batch, to_text

DEFAULT_LAMBDA = 0.005


@dataclass(frozen=True)
class FitnessConfig:
    lam: float = DEFAULT_LAMBDA
    loss_kind: str = "balanced_error"

    def __post_init__(self):
        if self.lam < 0:
            raise FitnessError(f"lambda must be >= 0, got {self.lam}")
        if self.loss_kind != "balanced_error":
            raise FitnessError(f"unsupported loss {self.loss_kind!r}")


@dataclass(frozen=True)
class Score:
    fitness: float
    loss: float
    auroc: float
    complexity: int
    tpr: float = 0.0
    tnr: float = 0.0

    def to_json(self) -> dict:
        return {"fitness": self.fitness, "loss": self.loss, "auroc": self.auroc, "complexity": self.complexity}


@dataclass(frozen=True)
class LabeledMatrix:
    """Feature rows plus binary labels: the data an expression is scored on."""

    X: np.ndarray
    y: np.ndarray
    schema: object
    ids: tuple = ()
    pos: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y).astype(int)
        if self.X.shape[0] != y.shape[0]:
            raise FitnessError(f"{self.X.shape[0]} feature rows but {y.shape[0]} labels")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "pos", y == 1)

    @property
    def n_pos(self) -> int:
        return int(self.pos.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.y) - self.pos.sum())

    def __len__(self):
        return len(self.y)


def rates(predictions, labels) -> tuple[float, float]:
    """(TPR, TNR) of boolean predictions."""
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise FitnessError(f"length mismatch: {p.shape[0]} predictions, {y.shape[0]} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FitnessError("labels contain a single class; balanced error is undefined")
    tp = int(np.count_nonzero(p & pos))
    tn = int(np.count_nonzero(~p & ~pos))
    return tp / n_pos, tn / n_neg


def auroc_binary(predictions, labels) -> float:
    """Mann-Whitney AUROC of hard predictions, ties counted as one half."""
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise FitnessError(f"length mismatch: {p.shape[0]} predictions, {y.shape[0]} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FitnessError("AUROC needs both classes in labels")
    tp = int(np.count_nonzero(p & pos))
    fn = n_pos - tp
    fp = int(np.count_nonzero(p & ~pos))
    tn = n_neg - fp
    # positive ranked above negative: (1, 0); tie: (1, 1) or (0, 0)
    wins = tp * tn + 0.5 * (tp * fp + fn * tn)
    return wins / (n_pos * n_neg)


def score_predictions(predictions, labels, node_count: int, config: FitnessConfig) -> Score:
    tpr, tnr = rates(predictions, labels)
    accuracy = (tpr + tnr) / 2
    loss = 1.0 - accuracy
    return Score(
        fitness=accuracy - config.lam * node_count,
        loss=loss,
        auroc=accuracy,
        complexity=node_count,
        tpr=tpr,
        tnr=tnr,
    )


def score(expr, data: LabeledMatrix, config: FitnessConfig) -> Score:
    if data.n_pos == 0 or data.n_neg == 0:
        raise FitnessError("split has a single class; loss is undefined")
    preds = evaluate_batch(expr, data.X, data.schema)
    return score_predictions(preds, data.y, complexity(expr), config)


def rank_key(candidate):
    return (-candidate.score.fitness, candidate.score.complexity, candidate.text)


def rank(candidates):
    """Best first: fitness desc, then fewer nodes, then printed form."""
    for c in candidates:
        if c.score is None:
            raise FitnessError(f"candidate {c.text!r} is unscored")
    return sorted(candidates, key=rank_key)


def describe(expr, s: Score) -> dict:
    return {**s.to_json(), "expression": to_text(expr)}
