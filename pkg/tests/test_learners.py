import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pod.learners import (LearnerError, LearnerSpec, _k_nearest, fit, parse_learner,
                          parse_learners, predict, select_learner)
from pod.losses import make_loss

SQ = make_loss("squared")


def test_parse_learners():
    specs = parse_learners("ols,knn:5,tree:4:10,mlp:5")
    assert [s.kind for s in specs] == ["ols", "knn", "tree", "mlp"]
    assert specs[1].k == 5 and specs[2].max_depth == 4 and specs[3].hidden_units == 5
    assert parse_learner("ols:0.5").ridge == 0.5
    assert parse_learner("knn").k is None
    for bad in ("svm", "knn:x", "knn:0", "", "mean:3"):
        with pytest.raises(LearnerError):
            parse_learners(bad)


def test_mean_predictors():
    r = np.zeros((3, 2))
    p = fit(LearnerSpec("ols"), r, 0, np.array([1.0, 2.0, 3.0]), SQ)
    np.testing.assert_array_equal(predict(p, np.random.default_rng(0).standard_normal((4, 2))),
                                  np.full((4, 1), 2.0))
    zo = make_loss("zero-one", 2)
    p = fit(LearnerSpec("knn"), r, 0, np.array([0, 0, 1]), zo)
    np.testing.assert_array_equal(predict(p, np.ones((5, 2))), [0] * 5)
    ce = make_loss("cross-entropy", 3)
    p = fit(LearnerSpec("tree"), r, 0, np.array([0, 0, 1]), ce)
    # add-one smoothing: (2+1, 1+1, 0+1) / 6
    np.testing.assert_allclose(predict(p, r)[0], [0.5, 1 / 3, 1 / 6])


def test_ols_realizable_line():
    r = np.random.default_rng(1).standard_normal((20, 3))
    y = 2 * r[:, 0] + 1
    p = fit(LearnerSpec("ols"), r, 1, y, SQ)
    np.testing.assert_allclose(predict(p, r)[:, 0], y, atol=1e-8)


def test_knn_memorizes():
    r = np.random.default_rng(2).standard_normal((15, 2))
    y = r[:, 0] ** 3
    p = fit(LearnerSpec("knn", k=1), r, 2, y, SQ)
    np.testing.assert_allclose(predict(p, r)[:, 0], y)
    with pytest.raises(LearnerError, match="k=20"):
        fit(LearnerSpec("knn", k=20), r, 2, y, SQ)


def test_k_nearest_matches_stable_sort():
    g = np.random.default_rng(3)
    dist = g.integers(0, 4, size=(30, 12)).astype(float)  # many ties
    for k in (1, 3, 7):
        got = _k_nearest(dist, k)
        want = np.argsort(dist, axis=1, kind="stable")[:, :k]
        np.testing.assert_array_equal(np.sort(got, axis=1), np.sort(want, axis=1))


def test_stump_separates_classes():
    r = np.r_[np.linspace(-2, -0.5, 10), np.linspace(0.5, 2, 10)][:, None]
    y = np.r_[np.zeros(10, int), np.ones(10, int)]
    p = fit(LearnerSpec("tree", max_depth=1, min_leaf=1), r, 1, y, make_loss("zero-one", 2))
    assert np.all(predict(p, r) == y)


def test_ols_rejects_classification():
    with pytest.raises(LearnerError):
        fit(LearnerSpec("ols"), np.ones((4, 1)), 1, np.array([0, 1, 0, 1]),
            make_loss("zero-one", 2))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), kind=st.sampled_from(["ols", "knn", "tree", "mlp"]),
       d=st.integers(1, 3))
def test_predictions_ignore_extra_coordinates(seed, kind, d):
    g = np.random.default_rng(seed)
    r = g.standard_normal((40, 4))
    y = r[:, 0] - r[:, 1] + 0.1 * g.standard_normal(40)
    spec = parse_learner(kind if kind != "mlp" else "mlp:3:50")
    p = fit(spec, r, d, y, SQ, seed=seed)
    test = g.standard_normal((10, 4))
    garbage = test.copy()
    garbage[:, d:] = g.standard_normal((10, 4 - d)) * 1e6
    assert predict(p, test).tobytes() == predict(p, garbage).tobytes()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), kind=st.sampled_from(["knn", "tree", "mlp"]))
def test_probabilities_sum_to_one(seed, kind):
    g = np.random.default_rng(seed)
    r = g.standard_normal((40, 2))
    y = (r[:, 0] > 0).astype(int) + (r[:, 1] > 1).astype(int)
    spec = parse_learner(kind if kind != "mlp" else "mlp:3:50")
    probs = predict(fit(spec, r, 2, y, make_loss("cross-entropy", 3)), r)
    assert probs.shape == (40, 3) and np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_ols_training_risk_nested(seed):
    g = np.random.default_rng(seed)
    r = g.standard_normal((50, 5))
    y = r @ g.standard_normal(5) + g.standard_normal(50)
    risks = []
    for d in range(6):
        p = fit(LearnerSpec("ols"), r, d, y, SQ)
        risks.append(SQ.per_sample(y, predict(p, r)).mean())
    assert all(b <= a + 1e-8 for a, b in zip(risks, risks[1:]))


def test_mlp_deterministic():
    g = np.random.default_rng(4)
    r = g.standard_normal((30, 2))
    y = np.tanh(r[:, 0])
    spec = parse_learner("mlp:4:100")
    a = fit(spec, r, 2, y, SQ, seed=9)
    b = fit(spec, r, 2, y, SQ, seed=9)
    assert all(np.array_equal(a.state[k], b.state[k]) for k in a.state
               if isinstance(a.state[k], np.ndarray))
    assert predict(a, r).tobytes() == predict(b, r).tobytes()


def test_select_single_candidate():
    spec = LearnerSpec("tree")
    assert select_learner([spec], np.ones((4, 1)), 1, np.zeros(4), SQ) is spec


def _selection_rate(make_y, winner_kinds, runs=100):
    wins = 0
    cands = [LearnerSpec("ols"), LearnerSpec("knn", k=5), LearnerSpec("tree")]
    for s in range(runs):
        g = np.random.default_rng(s)
        r = g.standard_normal((500, 2))
        y = make_y(r, g)
        wins += select_learner(cands[:2] if "ols" in winner_kinds else cands, r, 1, y, SQ,
                               seed=s).kind in winner_kinds
    return wins / runs


def test_select_prefers_ols_on_linear():
    assert _selection_rate(lambda r, g: r[:, 0] + g.standard_normal(500), {"ols"}) >= 0.9


def test_select_prefers_flexible_on_quadratic():
    rate = _selection_rate(lambda r, g: r[:, 0] ** 2 + 0.5 * g.standard_normal(500),
                           {"knn", "tree"})
    assert rate >= 0.9


def test_select_skips_failing_candidates():
    r = np.random.default_rng(5).standard_normal((20, 1))
    y = (r[:, 0] > 0).astype(int)
    got = select_learner([LearnerSpec("ols"), LearnerSpec("knn", k=3)], r, 1, y,
                         make_loss("zero-one", 2))
    assert got.kind == "knn"
