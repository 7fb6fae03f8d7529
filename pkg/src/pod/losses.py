"""Losses that define predictiveness.

Predictions are passed around as arrays whose layout depends on the loss:

* ``squared``: continuous predictions, shape (m, q)
* ``zero_one``: hard labels, shape (m,)
* ``cross_entropy``: class probabilities, shape (m, M)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQUARED = "squared"
ZERO_ONE = "zero_one"
CROSS_ENTROPY = "cross_entropy"

# prediction modes requested from learners
CONTINUOUS = "continuous"
HARD_LABEL = "hard_label"
PROBABILITIES = "probabilities"

_MODE = {SQUARED: CONTINUOUS, ZERO_ONE: HARD_LABEL, CROSS_ENTROPY: PROBABILITIES}
_ALIASES = {"squared": SQUARED, "zero-one": ZERO_ONE, "zero_one": ZERO_ONE, "0-1": ZERO_ONE,
            "cross-entropy": CROSS_ENTROPY, "cross_entropy": CROSS_ENTROPY}


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class Loss:
    kind: str
    n_classes: int | None = None
    clip: float = 1e-12

    def __post_init__(self):
        if self.kind not in _MODE:
            raise LossError(f"unknown loss {self.kind!r}")
        if self.kind != SQUARED and (self.n_classes is None or self.n_classes < 2):
            raise LossError(f"{self.kind} loss needs n_classes >= 2")

    @property
    def output_mode(self) -> str:
        return _MODE[self.kind]

    @property
    def categorical(self) -> bool:
        return self.kind != SQUARED

    def per_sample(self, ys, yhats) -> np.ndarray:
        """Vector of losses, one per row."""
        ys = np.asarray(ys)
        yhats = np.asarray(yhats)
        if len(ys) != len(yhats):
            raise LossError(f"{len(ys)} responses but {len(yhats)} predictions")
        if self.kind == SQUARED:
            ys = ys.astype(float)
            yhats = yhats.astype(float)
            if ys.ndim == 1:
                ys = ys[:, None]
            if yhats.ndim == 1:
                yhats = yhats[:, None]
            if ys.shape != yhats.shape:
                raise LossError(f"response shape {ys.shape} != prediction shape {yhats.shape}")
            return np.sum((ys - yhats) ** 2, axis=1)

        labels = _as_labels(ys, self.n_classes)
        if self.kind == ZERO_ONE:
            if yhats.ndim != 1:
                raise LossError("zero-one loss needs hard label predictions")
            pred = _as_labels(yhats, self.n_classes)
            return (labels != pred).astype(float)

        if yhats.ndim != 2 or yhats.shape[1] != self.n_classes:
            raise LossError(f"cross-entropy needs probability vectors of length {self.n_classes}")
        if np.any(yhats < 0) or np.any(np.abs(yhats.sum(axis=1) - 1.0) > 1e-8):
            raise LossError("invalid probability vector (negative entries or sum != 1)")
        assigned = yhats[np.arange(len(labels)), labels]
        return -np.log(np.maximum(assigned, self.clip))


def _as_labels(values, n_classes) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 2 and values.shape[1] == 1:
        values = values[:, 0]
    if values.dtype.kind == "f" and np.any(values != np.round(values)):
        raise LossError("labels must be integers")
    labels = values.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LossError(f"labels must lie in [0, {n_classes})")
    return labels


def make_loss(name: str, n_classes: int | None = None, clip: float = 1e-12) -> Loss:
    """Build a loss from a CLI-style name (``squared``, ``zero-one``, ``cross-entropy``)."""
    try:
        kind = _ALIASES[name]
    except KeyError:
        raise LossError(f"unknown loss {name!r}; choose squared, zero-one or cross-entropy") from None
    return Loss(kind, n_classes if kind != SQUARED else None, clip)


def loss_eval(loss: Loss, y, yhat) -> float:
    """Loss for a single observation."""
    if loss.kind == SQUARED:
        ys = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
        yh = np.atleast_1d(np.asarray(yhat, dtype=float))[None, :]
    elif loss.kind == ZERO_ONE:
        ys, yh = np.array([y]), np.array([yhat])
    else:
        ys, yh = np.array([y]), np.asarray(yhat, dtype=float)[None, :]
    return float(loss.per_sample(ys, yh)[0])


def mean_risk(loss: Loss, ys, yhats):
    """Empirical risk and the per-sample losses it averages."""
    per = loss.per_sample(ys, yhats)
    if per.size == 0:
        raise LossError("mean_risk of an empty sample")
    return float(per.mean()), per
