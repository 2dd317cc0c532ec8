"""Binary random forest (T_p = 1 pathological, T_n = 0 non-pathological).

Trees are grown on a random subset of the rows (``bag_fraction`` of them,
drawn without replacement unless ``bootstrap`` is set), split on Gini
impurity over ``max_features`` randomly chosen columns per node, and grown
until the node is pure or holds fewer than two rows. Split thresholds are
midpoints between consecutive distinct values; rows with ``x <= threshold``
go left.

Candidate columns are drawn and tie-broken in the order of their *names*,
so reordering the columns of both training and probe data leaves the
model's predictions unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numba import njit

from pathlung.errors import InputError, ParameterError, TrainingError

T_P = 1
T_N = 0
MODEL_FORMAT = "pathlung-forest"
MODEL_VERSION = 1


@dataclass(eq=False)
class Tree:
    """Flat node arrays; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    votes: np.ndarray  # (n_nodes, 2) class counts [T_n, T_p]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_vote(self) -> np.ndarray:
        # ties favour T_p
        return (self.votes[:, 1] >= self.votes[:, 0]).astype(np.int8)


@dataclass(eq=False)
class ForestModel:
    trees: List[Tree]
    feature_names: List[str]
    n_trees: int = 70
    bag_fraction: float = 0.6
    bootstrap: bool = False
    max_features: Optional[int] = None
    rng_seed: int = 0
    bags: List[np.ndarray] = field(default_factory=list)
    n_train: int = 0

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def params(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "bag_fraction": self.bag_fraction,
            "bootstrap": self.bootstrap,
            "max_features": self.max_features,
            "rng_seed": self.rng_seed,
        }

    def _packed(self):
        if not hasattr(self, "_pack"):
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
            self._pack = (
                offsets.astype(np.int64),
                np.concatenate([t.feature for t in self.trees]).astype(np.int64),
                np.concatenate([t.threshold for t in self.trees]).astype(np.float64),
                np.concatenate([t.left for t in self.trees]).astype(np.int64),
                np.concatenate([t.right for t in self.trees]).astype(np.int64),
                np.concatenate([t.leaf_vote() for t in self.trees]).astype(np.int8),
            )
        return self._pack

    def tree_votes(self, X) -> np.ndarray:
        """``(n_rows, n_trees)`` matrix of per-tree T_p votes (0/1)."""
        X = _check_matrix(X, self.n_features)
        return _vote_matrix(X, *self._packed())

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting T_p, per row."""
        return self.tree_votes(X).mean(axis=1)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.int64)


def _check_matrix(X, n_features):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise InputError(f"expected rows of {n_features} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("feature matrix contains non-finite values")
    return X


@njit(cache=True)
def _vote_matrix(X, offsets, feature, threshold, left, right, vote):
    n = X.shape[0]
    n_trees = offsets.size - 1
    out = np.empty((n, n_trees), dtype=np.int8)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, t] = vote[base + node]
    return out


def _best_split(x, y):
    """Lowest weighted Gini split of one column: ``(impurity, threshold)`` or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    boundary = np.flatnonzero(xs[1:] > xs[:-1])
    if boundary.size == 0:
        return None
    n = len(xs)
    pos_left = np.cumsum(ys)[boundary]
    n_left = boundary + 1.0
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    pl = pos_left / n_left
    pr = pos_right / n_right
    gini = n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)
    i = int(np.argmin(gini))
    b = boundary[i]
    lo, hi = xs[b], xs[b + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(gini[i]), float(thr)


def _grow_tree(X, y, rows, rng, mtry, rank_order):
    """Grow one tree on ``rows``; ``rank_order`` lists column indices by name order."""
    d = X.shape[1]
    feature, threshold, left, right, votes = [], [], [], [], []

    def new_node(r):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(y[r].sum())
        votes.append((len(r) - pos, pos))
        return len(feature) - 1

    stack = [(new_node(rows), rows)]
    while stack:
        node, r = stack.pop()
        n_pos = votes[node][1]
        if len(r) < 2 or n_pos == 0 or n_pos == len(r):
            continue
        perm = rng.permutation(d)
        # the drawn subset is searched in name order; the rest only as fallback
        tiers = (np.sort(perm[:mtry]), np.sort(perm[mtry:]))
        best = None
        for tier in tiers:
            for rank in tier:
                col = rank_order[rank]
                split = _best_split(X[r, col], y[r])
                if split is not None and (best is None or split[0] < best[0]):
                    best = (split[0], split[1], col)
            if best is not None:
                break
        if best is None:
            continue
        _, thr, col = best
        go_left = X[r, col] <= thr
        r_left, r_right = r[go_left], r[~go_left]
        feature[node] = col
        threshold[node] = thr
        left[node] = new_node(r_left)
        right[node] = new_node(r_right)
        stack.append((right[node], r_right))
        stack.append((left[node], r_left))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(votes, dtype=np.int64).reshape(-1, 2),
    )


def train(X, y, n_trees: int = 70, bag_fraction: float = 0.6, rng_seed: int = 0,
          bootstrap: bool = False, max_features: Optional[int] = None,
          feature_names: Optional[Sequence[str]] = None) -> ForestModel:
    """Fit a forest on rows ``X`` with labels ``y`` in {0 = T_n, 1 = T_p}.

    ``max_features`` defaults to ``round(sqrt(n_features))``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"feature matrix {X.shape} and labels {y.shape} do not line up")
    if len(X) < 2:
        raise TrainingError("need at least two training rows")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training features contain non-finite values")
    if not np.all((y == T_N) | (y == T_P)):
        raise TrainingError("labels must be 0 (T_n) or 1 (T_p)")
    for cls, name in ((T_P, "T_p (pathological)"), (T_N, "T_n (non-pathological)")):
        if not np.any(y == cls):
            raise TrainingError(f"training set has no rows of class {name}")
    if n_trees < 1:
        raise ParameterError("n_trees must be at least 1")
    if not 0 < bag_fraction <= 1:
        raise ParameterError(f"bag_fraction must lie in (0, 1], got {bag_fraction}")

    n, d = X.shape
    names = list(feature_names) if feature_names is not None else [f"f{i:03d}" for i in range(d)]
    if len(names) != d or len(set(names)) != d:
        raise ParameterError("feature_names must be unique and match the column count")
    mtry = max_features if max_features is not None else max(1, int(round(math.sqrt(d))))
    if not 1 <= mtry <= d:
        raise ParameterError(f"max_features must lie in [1, {d}]")
    rank_order = np.array(sorted(range(d), key=lambda i: names[i]), dtype=np.int64)

    bag_size = max(1, int(math.ceil(bag_fraction * n)))
    streams = np.random.SeedSequence(rng_seed).spawn(n_trees)
    trees, bags = [], []
    for seq in streams:
        rng = np.random.default_rng(seq)
        if bootstrap:
            bag = rng.choice(n, size=n, replace=True)
        else:
            bag = rng.choice(n, size=bag_size, replace=False)
        bag = np.sort(bag)
        trees.append(_grow_tree(X, y, bag, rng, mtry, rank_order))
        bags.append(bag)
    return ForestModel(trees, names, n_trees, bag_fraction, bootstrap, max_features, rng_seed, bags, n)


def predict(model: ForestModel, fv, threshold: float = 0.5):
    """Classify one feature vector: ``(label, score)``, score = fraction of T_p votes."""
    fv = np.asarray(fv, dtype=np.float64)
    if not np.all(np.isfinite(fv)):
        raise InputError("feature vector contains non-finite values")
    score = float(model.predict_proba(fv.reshape(1, -1))[0])
    return (T_P if score >= threshold else T_N), score


@dataclass(frozen=True)
class OOBScore:
    accuracy: float  # nan when no row is out of bag
    n_scored: int
    n_unscored: int


def oob_accuracy(model: ForestModel, X, y) -> OOBScore:
    """Accuracy using, for each row, only the trees whose bag excluded it."""
    X = _check_matrix(X, model.n_features)
    y = np.asarray(y).astype(np.int64)
    if len(X) != model.n_train or len(model.bags) != len(model.trees):
        raise InputError("OOB scoring needs the exact training rows and recorded bags")
    votes = model.tree_votes(X).astype(np.int64)
    out_of_bag = np.ones((len(X), len(model.trees)), dtype=bool)
    for t, bag in enumerate(model.bags):
        out_of_bag[bag, t] = False
    n_oob = out_of_bag.sum(axis=1)
    scored = n_oob > 0
    if not scored.any():
        return OOBScore(float("nan"), 0, len(X))
    score = (votes * out_of_bag).sum(axis=1)[scored] / n_oob[scored]
    pred = (score >= 0.5).astype(np.int64)
    acc = float(np.mean(pred == y[scored]))
    return OOBScore(acc, int(scored.sum()), int((~scored).sum()))


# -- persistence ---------------------------------------------------------------


def to_dict(model: ForestModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "labels": {"T_n": T_N, "T_p": T_P},
        "feature_names": list(model.feature_names),
        "params": model.params(),
        "n_train": model.n_train,
        "bags": [b.tolist() for b in model.bags],
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "votes": t.votes.tolist(),
            }
            for t in model.trees
        ],
    }


def from_dict(doc: dict) -> ForestModel:
    if doc.get("format") != MODEL_FORMAT:
        raise InputError(f"not a {MODEL_FORMAT} model file")
    if doc.get("version") != MODEL_VERSION:
        raise InputError(f"unsupported model version {doc.get('version')}")
    trees = [
        Tree(
            np.array(t["feature"], dtype=np.int64),
            np.array(t["threshold"], dtype=np.float64),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["votes"], dtype=np.int64).reshape(-1, 2),
        )
        for t in doc["trees"]
    ]
    p = doc["params"]
    return ForestModel(
        trees=trees,
        feature_names=list(doc["feature_names"]),
        n_trees=p["n_trees"],
        bag_fraction=p["bag_fraction"],
        bootstrap=p["bootstrap"],
        max_features=p["max_features"],
        rng_seed=p["rng_seed"],
        bags=[np.array(b, dtype=np.int64) for b in doc.get("bags", [])],
        n_train=doc.get("n_train", 0),
    )


def save_model(model: ForestModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh)


def load_model(path) -> ForestModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: model file is not valid JSON ({exc})") from exc
    return from_dict(doc)
