"""Datasets, CSV ingestion, standardization and seeded random streams."""

from __future__ import annotations

import csv
import logging
import math
import sys
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Predictors ``x`` (n x p) and a response block.

    Continuous responses are stored as an (n, q) float array. Categorical
    responses are stored as an (n,) integer array with values in
    ``[0, n_classes)``; ``labels`` keeps the original label of each index.
    """

    x: np.ndarray
    y: np.ndarray
    kind: str = CONTINUOUS
    n_classes: int | None = None
    labels: tuple = ()
    feature_names: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"x must be a non-empty 2-d array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"non-finite predictor value at row {i}, column {j}")

        if self.kind == CONTINUOUS:
            y = np.asarray(self.y, dtype=float)
            if y.ndim == 1:
                y = y[:, None]
            if y.ndim != 2 or y.shape[1] < 1:
                raise DataError(f"continuous y must be 1-d or 2-d, got shape {y.shape}")
            if not np.all(np.isfinite(y)):
                raise DataError("non-finite response value")
            n_classes = None
        elif self.kind == CATEGORICAL:
            y_raw = np.asarray(self.y)
            if y_raw.ndim == 2 and y_raw.shape[1] == 1:
                y_raw = y_raw[:, 0]
            if y_raw.ndim != 1:
                raise DataError("categorical y must be a vector of labels")
            if y_raw.dtype.kind == "f":
                if not np.all(np.isfinite(y_raw)) or np.any(y_raw != np.round(y_raw)):
                    raise DataError("categorical labels must be integers")
            y = y_raw.astype(np.int64)
            n_classes = self.n_classes
            if n_classes is None:
                n_classes = int(y.max()) + 1 if y.size else 0
            if n_classes < 1 or y.min() < 0 or y.max() >= n_classes:
                raise DataError(f"categorical labels must lie in [0, {n_classes})")
        else:
            raise DataError(f"unknown response kind {self.kind!r}")

        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")

        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", n_classes)
        if self.kind == CATEGORICAL and not self.labels:
            object.__setattr__(self, "labels", tuple(range(n_classes)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1] if self.kind == CONTINUOUS else 1

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.kind, self.n_classes,
                       self.labels, self.feature_names)

    def with_x(self, x) -> "Dataset":
        return Dataset(x, self.y, self.kind, self.n_classes, self.labels)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _label_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def load_csv(path, response: Sequence[str] | str, kind: str = CONTINUOUS,
             keep_labels: Sequence[str] | None = None) -> Dataset:
    """Read a headed, comma-delimited UTF-8 file into a :class:`Dataset`.

    ``response`` names the response column(s); every other column becomes a
    predictor, in file order. Row numbers in error messages are 1-based data
    rows (the header is row 0). For categorical responses, ``keep_labels``
    restricts the data to rows whose label is listed; the surviving labels
    are re-indexed to ``0..M-1`` in numeric (else lexicographic) order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    if isinstance(response, str):
        response = [c.strip() for c in response.split(",") if c.strip()]
    if kind not in (CONTINUOUS, CATEGORICAL):
        raise DataError(f"unknown response kind {kind!r}")
    if kind == CATEGORICAL and len(response) != 1:
        raise DataError("a categorical response must be a single column")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]

    missing = [c for c in response if c not in header]
    if missing:
        raise DataError(f"response column(s) not found: {', '.join(missing)}")
    y_idx = [header.index(c) for c in response]
    x_idx = [j for j in range(len(header)) if j not in y_idx]
    if not x_idx:
        raise DataError("no predictor columns left after removing the response")
    if not rows:
        raise DataError(f"{path}: no data rows")

    keep = set(str(k) for k in keep_labels) if keep_labels is not None else None
    xs, ys = [], []
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        if kind == CATEGORICAL:
            lab = r[y_idx[0]].strip()
            if keep is not None and lab not in keep:
                continue
            ys.append(lab)
        else:
            ys.append([_parse_float(r[j].strip(), i, header[j]) for j in y_idx])
        xs.append([_parse_float(r[j].strip(), i, header[j]) for j in x_idx])
    if not xs:
        raise DataError(f"{path}: no rows left after label filtering")

    names = tuple(header[j] for j in x_idx)
    x = np.array(xs, dtype=float)
    if kind == CATEGORICAL:
        labels = tuple(sorted(set(ys), key=_label_sort_key))
        index = {lab: k for k, lab in enumerate(labels)}
        y = np.array([index[lab] for lab in ys], dtype=np.int64)
        print("label dictionary: " + ", ".join(f"{k}={lab}" for k, lab in enumerate(labels)),
              file=sys.stderr)
        return Dataset(x, y, CATEGORICAL, len(labels), labels, names)
    return Dataset(x, np.array(ys, dtype=float), CONTINUOUS, feature_names=names)


def load_matrix(path, drop: Sequence[str] = ()) -> tuple[np.ndarray, tuple]:
    """Read every column except ``drop`` as a real matrix; returns ``(x, names)``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    missing = [c for c in drop if c not in header]
    if missing:
        raise DataError(f"column(s) not found: {', '.join(missing)}")
    keep = [j for j, h in enumerate(header) if h not in drop]
    if not keep:
        raise DataError("no columns left")
    if not rows:
        raise DataError(f"{path}: no data rows")
    xs = []
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        xs.append([_parse_float(r[j].strip(), i, header[j]) for j in keep])
    return np.array(xs, dtype=float), tuple(header[j] for j in keep)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CenterScale:
    """Column centering and scaling; ``degenerate`` marks constant columns (scale 1)."""

    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(len(self.mean), dtype=bool))
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.mean


def fit_center_scale(x, warn: bool = True) -> CenterScale:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be 2-d")
    if x.shape[0] < 2:
        raise DataError("standardization needs at least 2 rows")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    # relative threshold so that columns equal up to rounding count as constant
    tiny = 1e-12 * np.maximum(1.0, np.abs(mean))
    degenerate = sd <= tiny
    if warn and degenerate.any():
        warnings.warn(f"constant column(s) {np.flatnonzero(degenerate).tolist()} kept with scale 1",
                      stacklevel=2)
    scale = np.where(degenerate, 1.0, sd)
    return CenterScale(mean, scale, degenerate)


def standardize(x, warn: bool = True):
    """Center each column and divide by its sample sd (n-1 denominator).

    Returns ``(z, cs)``. Constant columns are centered, kept with scale 1
    and flagged in ``cs.degenerate``.
    """
    cs = fit_center_scale(x, warn=warn)
    return cs.apply(x), cs


# ---------------------------------------------------------------------------
# Seeded streams
# ---------------------------------------------------------------------------

def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, *keys)``.

    Streams depend only on the key path, never on how many other streams
    were drawn before, so parallel and serial runs see identical numbers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
