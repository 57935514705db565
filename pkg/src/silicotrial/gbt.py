"""Histogram gradient-boosted regression trees.

Second-order boosting with Newton leaf weights and L2 regularization.
Features are quantile-binned once; trees grow level-wise, and at each level
only the smaller child's histogram is built (the sibling is the parent minus
it). Each round's step is halved until training loss does not increase, so
the recorded training loss is non-increasing for both losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit
from scipy.stats import loguniform, randint
from sklearn.model_selection import KFold, ParameterSampler, StratifiedKFold

from ._seeding import derive_seed
from .errors import DataError, SchemaError

LOSSES = ("logistic", "squared")

DEFAULT_PARAMS = {
    "max_depth": 4,
    "n_rounds": 150,
    "learning_rate": 0.1,
    "min_leaf": 20,
    "l2": 1.0,
    "max_bins": 64,
}

SEARCH_SPACE = {
    "max_depth": randint(2, 7),
    "n_rounds": randint(50, 401),
    "learning_rate": loguniform(0.03, 0.3),
    "min_leaf": randint(5, 51),
}

_EPS = 1e-6


# --------------------------------------------------------------------------
# binning


@dataclass(frozen=True)
class Binner:
    edges: tuple  # per feature, sorted split candidates

    @classmethod
    def fit(cls, x: np.ndarray, max_bins: int) -> "Binner":
        edges = []
        for col in x.T:
            uniq = np.unique(col)
            if len(uniq) <= max_bins:
                e = uniq[:-1]
            else:
                qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
                e = np.unique(qs)
                e = e[e < uniq[-1]]
            edges.append(e.astype(float))
        return cls(tuple(edges))

    @property
    def n_bins(self) -> int:
        return max((len(e) + 1 for e in self.edges), default=1)

    def transform(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            # bin = number of edges strictly below x, so bin <= b  <=>  x <= e[b]
            out[:, j] = np.searchsorted(e, x[:, j], side="left")
        return out


# --------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    feature: np.ndarray  # int, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            f = self.feature[node]
            idx = np.flatnonzero(f >= 0)
            if idx.size == 0:
                return self.value[node]
            cur = node[idx]
            go_left = x[idx, f[idx]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])

    @property
    def depth(self) -> int:
        depth = {0: 0}
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return max(depth.values())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )


def _best_splits(hist, l2, min_leaf):
    """Best (gain, feature, bin) per node from stacked (m, 3, F, B) histograms."""
    cum = np.cumsum(hist, axis=3)
    gl, hl, cl = cum[:, 0], cum[:, 1], cum[:, 2]
    g, h, c = gl[:, :1, -1:], hl[:, :1, -1:], cl[:, :1, -1:]
    gr, hr, cr = g - gl, h - hl, c - cl
    parent = g * g / (h + l2)
    gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent
    gain = np.where((cl >= min_leaf) & (cr >= min_leaf), gain, -np.inf)
    m, F, B = gain.shape
    flat = gain.reshape(m, -1)
    best = flat.argmax(axis=1)
    best_gain = flat[np.arange(m), best]
    return best_gain, best // B, best % B


@njit(cache=True)
def _fill_hist(xb, rows, slot, g, h, out):
    n_features = xb.shape[1]
    for i in range(rows.shape[0]):
        r = rows[i]
        s = slot[i]
        gr = g[r]
        hr = h[r]
        for f in range(n_features):
            b = xb[r, f]
            out[s, 0, f, b] += gr
            out[s, 1, f, b] += hr
            out[s, 2, f, b] += 1.0


def _grow_tree(xb, g, h, binner, n_bins, depth_limit, min_leaf, l2):
    """Grow one tree on binned data; return (Tree, per-row leaf value)."""
    n, F = xb.shape

    def hists(groups):
        # groups: list of row-index arrays -> (len(groups), 3, F, B)
        out = np.zeros((len(groups), 3, F, n_bins))
        if groups:
            slot = np.concatenate([np.full(len(r), i, dtype=np.int64) for i, r in enumerate(groups)])
            _fill_hist(xb, np.concatenate(groups), slot, g, h, out)
        return out

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    leaf_of_row = np.zeros(n, dtype=np.int64)
    all_rows = np.arange(n)
    frontier = [(0, all_rows)]
    frontier_hist = hists([all_rows])
    depth = 0
    while frontier:
        gains, feats, bins = _best_splits(frontier_hist, l2, min_leaf)
        next_frontier, small_groups, pending = [], [], []
        for i, (node, rows) in enumerate(frontier):
            G, H = frontier_hist[i, 0, 0].sum(), frontier_hist[i, 1, 0].sum()
            if depth >= depth_limit or not np.isfinite(gains[i]) or gains[i] <= 1e-12:
                value[node] = -G / (H + l2)
                leaf_of_row[rows] = node
                continue
            f, b = int(feats[i]), int(bins[i])
            mask = xb[rows, f] <= b
            lrows, rrows = rows[mask], rows[~mask]
            lid, rid = len(feature), len(feature) + 1
            feature[node], threshold[node] = f, float(binner.edges[f][b])
            left[node], right[node] = lid, rid
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            small_first = len(lrows) <= len(rrows)
            small_groups.append(lrows if small_first else rrows)
            pending.append((i, lid, lrows, rid, rrows, small_first))
        small_hist = hists(small_groups)
        new_hist = []
        for j, (i, lid, lrows, rid, rrows, small_first) in enumerate(pending):
            other = frontier_hist[i] - small_hist[j]
            lh, rh = (small_hist[j], other) if small_first else (other, small_hist[j])
            next_frontier.extend([(lid, lrows), (rid, rrows)])
            new_hist.extend([lh, rh])
        frontier = next_frontier
        frontier_hist = np.stack(new_hist) if new_hist else None
        depth += 1

    tree = Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )
    return tree, tree.value[leaf_of_row]


# --------------------------------------------------------------------------
# losses


def _grad_hess(loss, y, margin):
    if loss == "logistic":
        p = expit(margin)
        return p - y, np.maximum(p * (1 - p), 1e-16)
    return margin - y, np.ones_like(margin)


def loss_value(loss, y, margin) -> float:
    if loss == "logistic":
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin))
    return float(np.mean((margin - y) ** 2))


# --------------------------------------------------------------------------
# model


@dataclass
class GbtModel:
    loss: str
    base_score: float
    learning_rate: float
    trees: list
    n_features: int
    params: dict = field(default_factory=dict)
    train_loss: list = field(default_factory=list)
    report: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise SchemaError(f"input width {x.shape[1]} != model width {self.n_features}")
        return x

    def decision_function(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.full(len(x), self.base_score)
        for tree in self.trees:
            out += tree.predict(x)
        return out

    def predict(self, x) -> np.ndarray:
        """Probability of the positive class (logistic) or the regression value."""
        margin = self.decision_function(x)
        return expit(margin) if self.loss == "logistic" else margin

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "params": self.params,
            "train_loss": self.train_loss,
            "report": self.report,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "GbtModel":
        return cls(
            d["loss"],
            float(d["base_score"]),
            float(d["learning_rate"]),
            [Tree.from_dict(t) for t in d["trees"]],
            int(d["n_features"]),
            dict(d.get("params", {})),
            list(d.get("train_loss", [])),
            dict(d.get("report", {})),
        )


def _validate(x, y, loss):
    if loss not in LOSSES:
        raise DataError(f"unknown loss {loss!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("rows must be a non-empty 2-d matrix")
    if len(y) != len(x):
        raise DataError("labels and rows differ in length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("non-finite features or labels")
    if loss == "logistic" and not np.all((y == 0) | (y == 1)):
        raise DataError("logistic loss needs 0/1 labels")
    return x, y


def _base_score(loss, y):
    if loss == "logistic":
        p = min(max(float(np.mean(y)), _EPS), 1 - _EPS)
        return math.log(p / (1 - p))
    return float(np.mean(y))


def _fit_binned(xb, binner, y, loss, params, n_features) -> GbtModel:
    p = {**DEFAULT_PARAMS, **params}
    base = _base_score(loss, y)
    margin = np.full(len(y), base)
    history = [loss_value(loss, y, margin)]
    trees = []
    n_bins = binner.n_bins
    lr = float(p["learning_rate"])
    for _ in range(int(p["n_rounds"])):
        g, h = _grad_hess(loss, y, margin)
        tree, delta = _grow_tree(xb, g, h, binner, n_bins, int(p["max_depth"]), max(int(p["min_leaf"]), 1), float(p["l2"]))
        step, current = lr, history[-1]
        for _halving in range(12):
            trial = loss_value(loss, y, margin + step * delta)
            if trial <= current:
                break
            step *= 0.5
        else:
            step, trial = 0.0, current
        if step == 0.0:
            history.append(current)
            continue
        tree.value = tree.value * step
        margin = margin + step * delta
        trees.append(tree)
        history.append(trial)
    return GbtModel(loss, base, lr, trees, n_features, p, history)


def _prepare(x, max_bins, binner=None):
    binner = binner or Binner.fit(x, max_bins)
    xb = binner.transform(x)
    return binner, xb


def fit_gbt(x, y, loss: str = "logistic", params: dict | None = None) -> GbtModel:
    """One boosting fit with fixed hyperparameters."""
    x, y = _validate(x, y, loss)
    p = {**DEFAULT_PARAMS, **(params or {})}
    binner, xb = _prepare(x, int(p["max_bins"]))
    return _fit_binned(xb, binner, y, loss, p, x.shape[1])


def _constant_model(loss, y, n_features):
    base = _base_score(loss, y)
    return GbtModel(loss, base, 0.0, [], n_features, dict(DEFAULT_PARAMS), [loss_value(loss, y, np.full(len(y), base))])


def _folds(y, loss, k, seed):
    splitter = (
        StratifiedKFold(k, shuffle=True, random_state=seed % 2**32)
        if loss == "logistic"
        else KFold(k, shuffle=True, random_state=seed % 2**32)
    )
    return list(splitter.split(np.zeros(len(y)), y))


def cross_val_score(x, y, loss, params, cv_folds=5, seed=0) -> float:
    """Mean held-out loss (log-loss or MSE) over ``cv_folds`` folds; lower is better."""
    x, y = _validate(x, y, loss)
    p = {**DEFAULT_PARAMS, **params}
    binner, xb = _prepare(x, int(p["max_bins"]))
    return _cv(x, xb, binner, y, loss, p, _folds(y, loss, cv_folds, seed))


def _cv(x, xb, binner, y, loss, p, folds) -> float:
    scores = []
    for tr, va in folds:
        model = _fit_binned(xb[tr], binner, y[tr], loss, p, x.shape[1])
        scores.append(loss_value(loss, y[va], model.decision_function(x[va])))
    return float(np.mean(scores))


def train_gbt(
    x,
    y,
    loss: str = "logistic",
    hp_search_budget: int = 30,
    cv_folds: int = 5,
    seed: int = 0,
    search_rows: int | None = None,
    base_params: dict | None = None,
) -> GbtModel:
    """Random hyperparameter search scored by k-fold CV, then a full refit.

    ``search_rows`` caps the rows used during the search (a seeded subsample);
    the final model is always refit on every row. A budget of 0 skips the
    search and fits ``base_params``.
    """
    x, y = _validate(x, y, loss)
    base = {**DEFAULT_PARAMS, **(base_params or {})}
    if np.all(y == y[0]):
        model = _constant_model(loss, y, x.shape[1])
        model.report = {"constant_labels": True, "auc_defined": False, "n_trials": 0, "best_params": base}
        return model

    binner, xb = _prepare(x, int(base["max_bins"]))
    trials = []
    best = dict(base)
    best_score = None
    if hp_search_budget > 0 and len(y) >= 2 * cv_folds:
        rng = np.random.default_rng(derive_seed("gbt-search", seed))
        rows = np.arange(len(y))
        if search_rows is not None and search_rows < len(y):
            rows = np.sort(rng.choice(len(y), size=search_rows, replace=False))
        ys = y[rows]
        if loss == "logistic" and min(ys.sum(), len(ys) - ys.sum()) < cv_folds:
            rows, ys = np.arange(len(y)), y
        folds = _folds(ys, loss, cv_folds, derive_seed("gbt-folds", seed))
        sampler = ParameterSampler(SEARCH_SPACE, n_iter=hp_search_budget, random_state=derive_seed("gbt-hp", seed) % 2**32)
        for cand in sampler:
            p = {**base, **{k: (float(v) if k == "learning_rate" else int(v)) for k, v in cand.items()}}
            score = _cv(x[rows], xb[rows], binner, ys, loss, p, folds)
            trials.append({"params": p, "cv_score": score})
            if best_score is None or score < best_score:
                best, best_score = p, score

    model = _fit_binned(xb, binner, y, loss, best, x.shape[1])
    model.report = {
        "constant_labels": False,
        "auc_defined": loss == "logistic",
        "n_trials": len(trials),
        "cv_folds": cv_folds,
        "best_params": best,
        "best_cv_score": best_score,
        "trials": trials,
    }
    return model
