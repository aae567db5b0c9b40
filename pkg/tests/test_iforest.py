import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kiwiextreme.errors import ConfigInvalid, EmptyCatalog, TooFewRows
from kiwiextreme.ingest import EventKind, ExtremeEvent, Severity
from kiwiextreme.iforest import (
    FeatureMatrix, ForestConfig, IsolationForest, anomaly_score, build_tree, expected_path_c,
    n_flags, path_length, score_all, top_k_flags, tune_contamination,
)
from kiwiextreme.preprocess import ClimateSeries

from oracles import c_direct


def test_c_reference_values():
    assert expected_path_c(0) == 0.0
    assert expected_path_c(1) == 0.0
    assert expected_path_c(2) == pytest.approx(0.1544313, abs=1e-6)
    assert expected_path_c(256) == pytest.approx(10.24477, abs=1e-4)


def test_c_matches_direct_formula():
    ns = np.arange(2, 5000)
    np.testing.assert_allclose(expected_path_c(ns), [c_direct(int(n)) for n in ns], rtol=1e-12)


def test_c_increasing_up_to_a_million():
    c = expected_path_c(np.arange(2, 1_000_001))
    assert (c >= 0).all()
    assert (np.diff(c) > 0).all()


@pytest.mark.parametrize("factor, expected", [(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)])
def test_score_examples(factor, expected):
    for n in (2, 3, 256, 10_000):
        assert anomaly_score(factor * expected_path_c(n), n) == pytest.approx(expected, rel=1e-12)


def test_score_needs_two_rows():
    with pytest.raises(ValueError):
        anomaly_score(1.0, 1)


def test_single_instance_tree():
    tree = build_tree(np.array([[3.0]]), np.random.default_rng(0), 8)
    assert len(tree.feature) == 1 and tree.size[0] == 1 and tree.depth[0] == 0


def test_two_point_tree():
    for seed in range(20):
        tree = build_tree(np.array([1.0, 2.0]), np.random.default_rng(seed), 1)
        assert len(tree.feature) == 3
        assert 1.0 < tree.threshold[0] < 2.0
        assert tree.depth[tree.leaves].tolist() == [1.0, 1.0]
        assert path_length(tree, [1.0]) == 1.0


def test_identical_points_stay_in_root():
    tree = build_tree(np.full((4, 2), 7.0), np.random.default_rng(0), 2)
    assert len(tree.feature) == 1 and tree.size[0] == 4
    assert path_length(tree, [7.0, 7.0]) == pytest.approx(c_direct(4), abs=1e-12)


def test_leaf_adjustment():
    # depth-2 leaf holding a duplicate pair: 1 | 5 | 9,9
    tree = build_tree(np.array([1.0, 5.0, 9.0, 9.0]), np.random.default_rng(3), 10)
    leaf = tree.route(np.array([[9.0]]))[0]
    assert tree.size[leaf] == 2
    assert path_length(tree, [9.0]) == pytest.approx(tree.depth[leaf] + 0.1544313, abs=1e-6)
    for x in (1.0, 5.0):
        leaf = tree.route(np.array([[x]]))[0]
        assert tree.size[leaf] == 1
        assert path_length(tree, [x]) == tree.depth[leaf]


def tree_is_sound(tree, X):
    leaves = tree.leaves
    assert (tree.size[leaves] >= 1).all()
    assert tree.size[leaves].sum() == len(X)
    assert (tree.depth[leaves] <= tree.max_depth).all()
    landing = tree.route(X)
    assert set(landing) <= set(leaves)
    np.testing.assert_array_equal(np.bincount(landing, minlength=len(tree.size))[leaves], tree.size[leaves])
    # each split lies strictly inside the range of the rows reaching that node
    for node in np.flatnonzero(tree.feature >= 0):
        reach = [i for i in range(len(X)) if node_on_path(tree, X[i], node)]
        col = X[reach, tree.feature[node]]
        assert col.min() < tree.threshold[node] < col.max()


def node_on_path(tree, x, target):
    node = 0
    while True:
        if node == target:
            return True
        f = tree.feature[node]
        if f < 0:
            return False
        node = tree.left[node] if x[f] < tree.threshold[node] else tree.right[node]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 3), st.integers(0, 2**32 - 1), st.booleans())
def test_tree_soundness(n, d, seed, coarse):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, d)).astype(float) if coarse else rng.normal(size=(n, d))
    tree = build_tree(X, np.random.default_rng(seed + 1), max(1, math.ceil(math.log2(max(n, 2)))))
    tree_is_sound(tree, X)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        ForestConfig(contamination=0.5)
    with pytest.raises(ConfigInvalid):
        ForestConfig(contamination=0.0)
    with pytest.raises(ConfigInvalid):
        ForestConfig(n_trees=0)
    cfg = ForestConfig(n_trees=7, subsample_size=32, contamination=0.02, rng_seed=5)
    assert ForestConfig.from_dict(cfg.to_dict()) == cfg


def test_too_few_rows():
    with pytest.raises(TooFewRows):
        score_all(FeatureMatrix(np.array([1.0])), ForestConfig())
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([1.0, np.nan]))


def cluster_with_outliers(seed, n=1000, k=5):
    rng = np.random.default_rng(seed)
    inliers = rng.normal(0.0, 1.0, (n, 2))
    direction = rng.normal(size=(k, 2))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return np.vstack([inliers, 10.0 * direction])


def test_displaced_points_recovered():
    hits = []
    for seed in range(10):
        X = cluster_with_outliers(seed)
        rep = score_all(FeatureMatrix(X), ForestConfig(contamination=0.005, rng_seed=seed))
        assert rep.n_flagged == 6
        hits.append(rep.flags[-5:].sum())
    assert sum(h >= 4 for h in hits) >= 9


def test_determinism():
    X = cluster_with_outliers(1)
    cfg = ForestConfig(contamination=0.01, rng_seed=42)
    a, b = score_all(FeatureMatrix(X), cfg), score_all(FeatureMatrix(X), cfg)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    c = score_all(FeatureMatrix(X), cfg.__class__(**{**cfg.to_dict(), "rng_seed": 43}))
    assert not np.array_equal(a.scores, c.scores)


def test_identical_rows_tie_break():
    rep = score_all(FeatureMatrix(np.ones((200, 1))), ForestConfig(contamination=0.013))
    assert len(set(rep.scores.tolist())) == 1
    assert np.flatnonzero(rep.flags).tolist() == [0, 1, 2]


def test_flag_count_rounding():
    assert n_flags(0.07, 100) == 7
    assert n_flags(0.005, 1005) == 6
    assert n_flags(0.01, 3) == 1
    assert top_k_flags(np.array([0.1, 0.9, 0.9, 0.2]), 2).tolist() == [False, True, True, False]
    assert top_k_flags(np.array([0.5, 0.9, 0.5, 0.5]), 2).tolist() == [True, True, False, False]


def test_properties_random_datasets():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n, d = int(rng.integers(2, 501)), int(rng.integers(1, 5))
        X = rng.standard_t(3, (n, d))
        c = float(rng.uniform(0.005, 0.05))
        rep = score_all(FeatureMatrix(X), ForestConfig(n_trees=20, contamination=c, rng_seed=int(rng.integers(1 << 62))))
        assert ((rep.scores > 0) & (rep.scores <= 1)).all()
        order = np.argsort(rep.mean_path, kind="stable")
        mp, sc = rep.mean_path[order], rep.scores[order]
        strictly = np.diff(mp) > 0
        assert (np.diff(sc)[strictly] < 0).all()
        assert (np.diff(sc)[~strictly] == 0).all()
        assert rep.n_flagged == math.ceil(round(c * n, 9))


def test_forest_subsample_capped():
    forest = IsolationForest(ForestConfig(n_trees=3, subsample_size=256)).fit(np.arange(10.0))
    assert forest.sample_size == 10
    assert all(t.size[0] == 10 for t in forest.trees)


def spike_series():
    rng = np.random.default_rng(0)
    values = rng.normal(20.0, 1.0, 400)
    values[[100, 101, 102, 250]] = [35.0, 36.0, 35.5, 34.0]
    return ClimateSeries("s1", "TMAX_C", dt.date(2020, 1, 1), values)


def event(eid, start, end):
    return ExtremeEvent(eid, EventKind.HEATWAVE, start, end, Severity.SEVERE)


def test_tune_on_labelled_spikes():
    s = spike_series()
    days = [s.date_at(i) for i in (100, 101, 102, 250)]
    catalog = [event("e1", days[0], days[2]), event("e2", days[3], days[3])]
    res = tune_contamination(s, catalog, config=ForestConfig(rng_seed=1), tolerance_days=0)
    assert res.best == 0.01
    assert res.report.n_flagged == 4
    assert res.metrics[res.best].f1 == 1.0


def test_tune_singleton_and_ties():
    s = spike_series()
    catalog = [event("e1", s.date_at(100), s.date_at(102))]
    assert tune_contamination(s, catalog, grid=[0.03]).best == 0.03
    # catalog far outside the data gives F1 = 0 everywhere
    far = [event("e9", dt.date(1990, 1, 1), dt.date(1990, 1, 2))]
    res = tune_contamination(s, far, grid=[0.02, 0.01])
    assert res.best == 0.01
    with pytest.raises(EmptyCatalog):
        tune_contamination(s, [])
