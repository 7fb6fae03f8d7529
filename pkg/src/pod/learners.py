"""Prediction rules fit on the leading surrogate coordinates.

The learner zoo is deliberately small and deterministic: a constant rule,
least squares, k-nearest neighbours, a CART tree and a one-hidden-layer
network trained by full-batch gradient descent. Every fitted
:class:`Predictor` reads only the first ``d`` score columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .data import CenterScale, derive_rng, fit_center_scale
from .losses import CONTINUOUS, HARD_LABEL, PROBABILITIES, Loss
from .numerics import NumericalError, SingularSystemError, ols_solve

MEAN = "mean"
OLS = "ols"
KNN = "knn"
TREE = "tree"
MLP = "mlp"
KINDS = (MEAN, OLS, KNN, TREE, MLP)


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    """A candidate learner.

    ``knn`` with ``k=None`` uses ``ceil(n ** 0.4)`` neighbours for a training
    set of size n.
    """

    kind: str
    ridge: float = 0.0
    k: int | None = None
    max_depth: int = 4
    min_leaf: int = 10
    hidden_units: int = 5
    epochs: int = 500
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.ridge < 0:
            raise LearnerError("ridge must be non-negative")
        if self.k is not None and self.k < 1:
            raise LearnerError("knn needs k >= 1")
        if self.max_depth < 1 or self.min_leaf < 1:
            raise LearnerError("tree needs max_depth >= 1 and min_leaf >= 1")
        if self.hidden_units < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise LearnerError("invalid mlp settings")

    def label(self) -> str:
        if self.kind == OLS:
            return "ols" if self.ridge == 0 else f"ols:{self.ridge:g}"
        if self.kind == KNN:
            return "knn" if self.k is None else f"knn:{self.k}"
        if self.kind == TREE:
            return f"tree:{self.max_depth}:{self.min_leaf}"
        if self.kind == MLP:
            return f"mlp:{self.hidden_units}:{self.epochs}:{self.learning_rate:g}"
        return self.kind


def parse_learner(text: str) -> LearnerSpec:
    """Parse ``ols``, ``ols:RIDGE``, ``knn[:K]``, ``tree[:DEPTH[:MINLEAF]]``,
    ``mlp[:HIDDEN[:EPOCHS[:LR]]]`` or ``mean``."""
    parts = [s.strip() for s in text.strip().split(":")]
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == OLS:
            return LearnerSpec(OLS, ridge=float(args[0]) if args else 0.0)
        if kind == KNN:
            return LearnerSpec(KNN, k=int(args[0]) if args else None)
        if kind == TREE:
            kw = {}
            if len(args) > 0:
                kw["max_depth"] = int(args[0])
            if len(args) > 1:
                kw["min_leaf"] = int(args[1])
            return LearnerSpec(TREE, **kw)
        if kind == MLP:
            kw = {}
            if len(args) > 0:
                kw["hidden_units"] = int(args[0])
            if len(args) > 1:
                kw["epochs"] = int(args[1])
            if len(args) > 2:
                kw["learning_rate"] = float(args[2])
            return LearnerSpec(MLP, **kw)
        if kind == MEAN and not args:
            return LearnerSpec(MEAN)
    except (ValueError, IndexError) as exc:
        raise LearnerError(f"bad learner spec {text!r}: {exc}") from None
    raise LearnerError(f"unknown learner spec {text!r}")


def parse_learners(text: str) -> list[LearnerSpec]:
    specs = [parse_learner(t) for t in text.split(",") if t.strip()]
    if not specs:
        raise LearnerError("empty learner list")
    return specs


@dataclass(frozen=True, eq=False)
class Predictor:
    spec: LearnerSpec
    d: int
    mode: str
    n_classes: int | None
    state: dict = field(repr=False)
    score_cs: CenterScale | None = None

    def predict(self, r) -> np.ndarray:
        return predict(self, r)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _one_hot(y, m):
    out = np.zeros((len(y), m))
    out[np.arange(len(y)), y] = 1.0
    return out


def _laplace(counts):
    counts = np.asarray(counts, dtype=float)
    probs = counts + 1.0
    return probs / probs.sum(axis=-1, keepdims=True)


def _target(y, loss: Loss):
    if loss.categorical:
        labels = np.asarray(y).astype(np.int64).ravel()
        return _one_hot(labels, loss.n_classes)
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def _output(values, mode):
    """Turn leaf/neighbour outputs into the requested prediction layout.

    For classification ``values`` are class counts (or probabilities); hard
    labels take the argmax, which resolves ties to the lowest class index.
    """
    if mode == CONTINUOUS:
        return values
    if mode == HARD_LABEL:
        return np.argmax(values, axis=1)
    return _laplace(values)


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------

def _best_split(z, t, min_leaf):
    n, d = z.shape
    total = t.sum(axis=0)
    parent = float(total @ total) / n
    best = (0.0, -1, 0.0)
    # split after position i-1 in sorted order, i in [min_leaf, n - min_leaf]
    sizes = np.arange(1, n)
    lo, hi = min_leaf, n - min_leaf
    if lo > hi:
        return best
    for j in range(d):
        order = np.argsort(z[:, j], kind="stable")
        zs = z[order, j]
        left = np.cumsum(t[order], axis=0)[:-1]
        right = total - left
        nl = sizes.astype(float)
        score = np.einsum("ij,ij->i", left, left) / nl + np.einsum("ij,ij->i", right, right) / (n - nl)
        valid = np.zeros(n - 1, dtype=bool)
        valid[lo - 1:hi] = True
        valid &= zs[1:] > zs[:-1]
        if not valid.any():
            continue
        gains = np.where(valid, score - parent, -np.inf)
        i = int(np.argmax(gains))
        if gains[i] > best[0] * (1 + 1e-12) + 1e-12 * abs(parent):
            best = (float(gains[i]), j, 0.5 * (zs[i] + zs[i + 1]))
    return best


def _grow(z, t, depth, spec, nodes):
    node = len(nodes)
    nodes.append(None)
    n = len(z)
    value = t.sum(axis=0) if spec["categorical"] else t.mean(axis=0)
    if depth < spec["max_depth"] and n >= 2 * spec["min_leaf"]:
        gain, j, thr = _best_split(z, t, spec["min_leaf"])
        if j >= 0 and gain > 0:
            mask = z[:, j] <= thr
            left = _grow(z[mask], t[mask], depth + 1, spec, nodes)
            right = _grow(z[~mask], t[~mask], depth + 1, spec, nodes)
            nodes[node] = (j, thr, left, right, value)
            return node
    nodes[node] = (-1, 0.0, -1, -1, value)
    return node


def _tree_fit(z, t, spec: LearnerSpec, categorical):
    nodes: list = []
    _grow(z, t, 0, {"max_depth": spec.max_depth, "min_leaf": spec.min_leaf,
                    "categorical": categorical}, nodes)
    return {
        "feature": np.array([nd[0] for nd in nodes]),
        "threshold": np.array([nd[1] for nd in nodes]),
        "left": np.array([nd[2] for nd in nodes]),
        "right": np.array([nd[3] for nd in nodes]),
        "value": np.array([nd[4] for nd in nodes]),
    }


def _tree_predict(state, z):
    node = np.zeros(len(z), dtype=np.int64)
    feat, thr = state["feature"], state["threshold"]
    while True:
        f = feat[node]
        inner = f >= 0
        if not inner.any():
            break
        idx = np.flatnonzero(inner)
        go_left = z[idx, f[idx]] <= thr[node[idx]]
        node[idx] = np.where(go_left, state["left"][node[idx]], state["right"][node[idx]])
    return state["value"][node]


# ---------------------------------------------------------------------------
# k-NN
# ---------------------------------------------------------------------------

def _k_nearest(dist, k):
    """Indices of the k smallest entries per row; ties go to the lowest index."""
    if k == dist.shape[1]:
        return np.broadcast_to(np.arange(k), dist.shape)
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1:k]
    mask = dist <= kth
    counts = mask.sum(axis=1)
    if np.all(counts == k):
        return np.nonzero(mask)[1].reshape(-1, k)
    out = np.empty((len(dist), k), dtype=np.int64)
    for i, row in enumerate(dist):
        if counts[i] == k:
            out[i] = np.flatnonzero(mask[i])
        else:
            out[i] = np.argsort(row, kind="stable")[:k]
    return out


def _knn_predict(state, z, chunk=512):
    train, t, k = state["z"], state["t"], state["k"]
    out = np.empty((len(z), t.shape[1]))
    for start in range(0, len(z), chunk):
        block = z[start:start + chunk]
        dist = cdist(block, train, "sqeuclidean")
        nearest = _k_nearest(dist, k)
        out[start:start + chunk] = t[nearest].mean(axis=1) if not state["categorical"] \
            else t[nearest].sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# one-hidden-layer network
# ---------------------------------------------------------------------------

def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _mlp_fit(z, t, spec: LearnerSpec, categorical, rng):
    n, d = z.shape
    q = t.shape[1]
    h = spec.hidden_units
    w1 = rng.uniform(-0.5, 0.5, size=(d, h))
    b1 = rng.uniform(-0.5, 0.5, size=h)
    w2 = rng.uniform(-0.5, 0.5, size=(h, q))
    b2 = rng.uniform(-0.5, 0.5, size=q)
    if categorical:
        t_mean, t_scale = np.zeros(q), np.ones(q)
        target = t
    else:
        t_mean = t.mean(axis=0)
        t_scale = t.std(axis=0)
        t_scale[t_scale <= 0] = 1.0
        target = (t - t_mean) / t_scale
    lr = spec.learning_rate
    for _ in range(spec.epochs):
        hid = np.tanh(z @ w1 + b1)
        out = hid @ w2 + b2
        if categorical:
            out = _softmax(out)
        g_out = (out - target) / n
        g_w2 = hid.T @ g_out
        g_b2 = g_out.sum(axis=0)
        g_hid = (g_out @ w2.T) * (1.0 - hid * hid)
        g_w1 = z.T @ g_hid
        g_b1 = g_hid.sum(axis=0)
        w1 -= lr * g_w1
        b1 -= lr * g_b1
        w2 -= lr * g_w2
        b2 -= lr * g_b2
    return {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "t_mean": t_mean, "t_scale": t_scale}


def _mlp_predict(state, z, categorical):
    out = np.tanh(z @ state["w1"] + state["b1"]) @ state["w2"] + state["b2"]
    if categorical:
        return _softmax(out)
    return out * state["t_scale"] + state["t_mean"]


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def fit(spec: LearnerSpec, r, d: int, y, loss: Loss, seed: int = 0) -> Predictor:
    """Fit ``spec`` on the first ``d`` columns of the scores ``r``.

    ``d == 0`` always yields the constant rule: the mean response for
    squared loss, class frequencies (add-one smoothed) otherwise.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim != 2:
        raise LearnerError("scores must be a 2-d array")
    n = r.shape[0]
    if n < 1:
        raise LearnerError("cannot fit on zero rows")
    if not 0 <= d <= r.shape[1]:
        raise LearnerError(f"d={d} outside [0, {r.shape[1]}]")
    t = _target(y, loss)
    if len(t) != n:
        raise LearnerError("scores and responses have different lengths")
    mode = loss.output_mode
    categorical = loss.categorical
    m = loss.n_classes

    if d == 0 or spec.kind == MEAN:
        value = t.sum(axis=0) if categorical else t.mean(axis=0)
        return Predictor(LearnerSpec(MEAN), 0, mode, m, {"value": value})

    if spec.kind == OLS and categorical:
        raise LearnerError("ols produces continuous predictions; use knn, tree or mlp for classification")

    z_raw = r[:, :d]
    cs = fit_center_scale(z_raw, warn=False) if n >= 2 else \
        CenterScale(z_raw.mean(axis=0), np.ones(d))
    z = cs.apply(z_raw)

    if spec.kind == OLS:
        keep = ~cs.degenerate
        coef = np.zeros((d, t.shape[1]))
        t_mean = t.mean(axis=0)
        if keep.any():
            try:
                coef[keep] = ols_solve(z[:, keep], t - t_mean, spec.ridge)
            except SingularSystemError:
                coef[keep] = ols_solve(z[:, keep], t - t_mean, 1e-8 * n)
        state = {"coef": coef, "intercept": t_mean}
    elif spec.kind == KNN:
        k = spec.k if spec.k is not None else math.ceil(n ** 0.4)
        if k > n:
            raise LearnerError(f"knn with k={k} needs at least {k} training rows, got {n}")
        state = {"z": z, "t": t, "k": k, "categorical": categorical}
    elif spec.kind == TREE:
        state = _tree_fit(z, t, spec, categorical)
    else:
        rng = derive_rng(spec.seed, "mlp", seed)
        state = _mlp_fit(z, t, spec, categorical, rng)
    return Predictor(spec, d, mode, m, state, cs)


def predict(pred: Predictor, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[1] < pred.d:
        raise LearnerError(f"predictor needs at least {pred.d} score columns")
    m = len(r)
    if pred.spec.kind == MEAN:
        values = np.repeat(pred.state["value"][None, :], m, axis=0)
        return _output(values, pred.mode)
    z = pred.score_cs.apply(r[:, :pred.d])
    kind = pred.spec.kind
    if kind == OLS:
        return z @ pred.state["coef"] + pred.state["intercept"]
    if kind == KNN:
        values = _knn_predict(pred.state, z)
    elif kind == TREE:
        values = _tree_predict(pred.state, z)
    else:
        values = _mlp_predict(pred.state, z, pred.mode != CONTINUOUS)
        if pred.mode == PROBABILITIES:
            return values
    return _output(values, pred.mode)


def select_learner(candidates, r, d: int, y, loss: Loss, inner_folds: int = 2,
                   seed: int = 0) -> LearnerSpec:
    """Candidate with the smallest inner cross-validated risk.

    Fold risks are averaged per candidate; ties go to the earlier candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise LearnerError("no candidate learners")
    if len(candidates) == 1 or d == 0:
        return candidates[0]
    r = np.asarray(r, dtype=float)
    n = len(r)
    if n < 2 * inner_folds:
        raise LearnerError(f"inner {inner_folds}-fold CV needs at least {2 * inner_folds} rows")
    y = np.asarray(y)
    perm = derive_rng(seed, "inner-cv").permutation(n)
    folds = np.array_split(perm, inner_folds)
    best, best_risk = None, np.inf
    for c, spec in enumerate(candidates):
        risks = []
        try:
            for f, test in enumerate(folds):
                train = np.setdiff1d(perm, test, assume_unique=True)
                pred = fit(spec, r[train], d, y[train], loss, seed=c * inner_folds + f)
                risks.append(float(loss.per_sample(y[test], predict(pred, r[test])).mean()))
        except (LearnerError, NumericalError, ValueError):
            continue
        risk = float(np.mean(risks))
        if risk < best_risk:
            best, best_risk = spec, risk
    if best is None:
        raise LearnerError("every candidate learner failed to fit")
    return best


def with_seed(spec: LearnerSpec, seed: int) -> LearnerSpec:
    return replace(spec, seed=seed)
