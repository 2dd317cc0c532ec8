import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathlung.errors import InputError, ParameterError, TrainingError
from pathlung.forest import (
    T_N,
    T_P,
    ForestModel,
    Tree,
    from_dict,
    load_model,
    oob_accuracy,
    predict,
    save_model,
    to_dict,
    train,
)


def clusters(rng, n=500, d=24, separation=6.0):
    shift = np.full(d, separation / math.sqrt(d))  # centres 6 sigma apart along the diagonal
    X = np.vstack([rng.normal(size=(n, d)), rng.normal(size=(n, d)) + shift])
    y = np.r_[np.full(n, T_N), np.full(n, T_P)]
    return X, y, shift


def stump(vote_tp):
    # a single leaf that votes T_p (votes [0, 1]) or T_n (votes [1, 0])
    votes = np.array([[0, 1]] if vote_tp else [[1, 0]])
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), votes)


def test_two_rows_one_tree():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    y = np.array([T_N, T_P])
    m = train(X, y, n_trees=1, bag_fraction=1.0)
    assert np.array_equal(m.predict(X), y)


@pytest.mark.parametrize("y, missing", [([1, 1, 1], "T_n"), ([0, 0, 0], "T_p")])
def test_single_class_names_missing_class(y, missing):
    with pytest.raises(TrainingError, match=missing):
        train(np.zeros((3, 2)), np.array(y))


@pytest.mark.parametrize("kwargs", [dict(n_trees=0), dict(bag_fraction=0), dict(bag_fraction=1.5), dict(max_features=3)])
def test_parameter_validation(kwargs):
    with pytest.raises(ParameterError):
        train(np.eye(2), np.array([0, 1]), **kwargs)


def test_training_input_validation():
    with pytest.raises(TrainingError):
        train(np.array([[np.nan], [0.0]]), np.array([0, 1]))
    with pytest.raises(TrainingError):
        train(np.zeros((3, 1)), np.array([0, 1, 2]))
    with pytest.raises(TrainingError):
        train(np.zeros((1, 1)), np.array([1]))


def test_defaults_follow_table():
    m = train(np.eye(4), np.array([0, 1, 0, 1]))
    assert m.n_trees == 70 and len(m.trees) == 70 and m.bag_fraction == 0.6 and not m.bootstrap
    assert all(len(b) == math.ceil(0.6 * 4) for b in m.bags)
    assert all(len(np.unique(b)) == len(b) for b in m.bags)


def test_vote_rules():
    all_tp = ForestModel([stump(True)] * 70, ["a"])
    assert predict(all_tp, [0.0]) == (T_P, 1.0)
    half = ForestModel([stump(True)] * 35 + [stump(False)] * 35, ["a"])
    assert predict(half, [0.0]) == (T_P, 0.5)
    with pytest.raises(InputError):
        predict(half, [np.inf])


def test_separable_clusters(rng):
    X, y, shift = clusters(rng)
    m = train(X, y)
    assert oob_accuracy(m, X, y).accuracy >= 0.98
    assert m.predict(np.vstack([np.zeros(24), shift])).tolist() == [T_N, T_P]


def test_shuffled_labels_near_chance(rng):
    X, y, _ = clusters(rng)
    ys = rng.permutation(y)
    acc = oob_accuracy(train(X, ys), X, ys).accuracy
    assert 0.4 <= acc <= 0.6


def test_full_bags_leave_nothing_out_of_bag(rng):
    X, y, _ = clusters(rng, n=20)
    score = oob_accuracy(train(X, y, n_trees=5, bag_fraction=1.0), X, y)
    assert math.isnan(score.accuracy) and score.n_scored == 0 and score.n_unscored == 40


def test_bootstrap_bags(rng):
    X, y, _ = clusters(rng, n=50)
    m = train(X, y, n_trees=5, bootstrap=True)
    assert all(len(b) == 100 for b in m.bags)
    assert any(len(np.unique(b)) < 100 for b in m.bags)


def test_deterministic_and_seed_sensitive(rng):
    X, y, _ = clusters(rng, n=100, separation=1.5)
    probe = rng.normal(size=(200, 24))
    a = train(X, y, rng_seed=4).predict_proba(probe)
    assert np.array_equal(a, train(X, y, rng_seed=4).predict_proba(probe))
    assert not np.array_equal(a, train(X, y, rng_seed=5).predict_proba(probe))


def test_serialization_round_trip(tmp_path, rng):
    X, y, _ = clusters(rng, n=100, separation=1.5)
    m = train(X, y, n_trees=10, feature_names=[f"c{i}" for i in range(24)])
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    probe = rng.normal(size=(300, 24)) * 2
    assert np.array_equal(back.tree_votes(probe), m.tree_votes(probe))
    assert back.feature_names == m.feature_names and back.params() == m.params()
    assert oob_accuracy(back, X, y) == oob_accuracy(m, X, y)


def test_bad_model_files(tmp_path):
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(InputError):
        load_model(tmp_path / "a.json")
    with pytest.raises(InputError):
        from_dict({"format": "other"})
    doc = to_dict(train(np.eye(2), np.array([0, 1]), n_trees=1))
    doc["version"] = 99
    with pytest.raises(InputError):
        from_dict(doc)


def test_predict_checks_width(rng):
    m = train(np.eye(3), np.array([0, 1, 1]), n_trees=2)
    with pytest.raises(InputError):
        m.predict_proba(np.zeros((1, 4)))


@given(st.integers(0, 2**31), st.permutations(range(6)))
def test_feature_permutation_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 6))
    y = (X[:, 0] + X[:, 3] + 0.5 * rng.normal(size=60) > 0).astype(int)
    names = [f"f{i}" for i in range(6)]
    probe = rng.normal(size=(50, 6))
    a = train(X, y, n_trees=7, rng_seed=seed % 1000, feature_names=names)
    b = train(X[:, perm], y, n_trees=7, rng_seed=seed % 1000, feature_names=[names[i] for i in perm])
    assert np.array_equal(a.predict_proba(probe), b.predict_proba(probe[:, perm]))


@given(st.integers(0, 2**31), st.integers(0, 3), st.sampled_from([np.exp, np.cbrt, lambda v: 3 * v - 7, np.arctan]))
def test_monotone_transform_invariance(seed, col, fn):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 4))
    y = (X[:, 1] - X[:, 2] > 0).astype(int)
    if len(np.unique(y)) < 2:
        y[0] = 1 - y[0]
    Xt = X.copy()
    Xt[:, col] = fn(X[:, col])
    a = train(X, y, n_trees=7, rng_seed=seed % 1000)
    b = train(Xt, y, n_trees=7, rng_seed=seed % 1000)
    # splits see only bag rows; rows between two bag values may meet a moved midpoint
    va, vb = a.tree_votes(X), b.tree_votes(Xt)
    for t, (ta, tb) in enumerate(zip(a.trees, b.trees)):
        assert np.array_equal(ta.feature, tb.feature) and np.array_equal(ta.votes, tb.votes)
        assert np.array_equal(va[a.bags[t], t], vb[b.bags[t], t])
