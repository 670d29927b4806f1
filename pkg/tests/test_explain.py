import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import interventional_value, shapley_by_permutations, shapley_by_subsets
from seasoncast.errors import EmptyBackground, Inconsistent, TooManyFeatures
from seasoncast.explain import (
    Attribution,
    explain_samples,
    global_importance,
    select_background,
    shapley_exact,
    shapley_sampled,
    waterfall_data,
    write_attributions_csv,
    write_summary_dots_csv,
    write_waterfall_json,
)


def linear(w, c=0.0):
    w = np.asarray(w, dtype=float)
    return lambda X: np.asarray(X) @ w + c


def nonlinear(rng, k):
    w = rng.normal(size=k)
    pairs = rng.integers(0, k, size=(3, 2))

    def f(X):
        X = np.asarray(X)
        out = X @ w + np.tanh(X[:, 0]) * 2
        for i, j in pairs:
            out = out + X[:, i] * X[:, j]
        return out

    return f


def test_linear_hand_case():
    a = shapley_exact(linear([3.0, 2.0]), [1.0, 1.0], np.zeros((1, 2)))
    np.testing.assert_allclose(a.phi, [3.0, 2.0], atol=1e-12)
    assert a.base_value == 0.0 and a.prediction == 5.0


def test_constant_model():
    a = shapley_exact(lambda X: np.full(len(X), 7.0), [1.0, 2.0, 3.0], np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(a.phi, 0.0)
    assert a.base_value == 7.0


def test_symmetry_and_dummy_axioms():
    f = lambda X: X[:, 0] * X[:, 1] + 0.0 * X[:, 2]
    bg = np.random.default_rng(1).normal(size=(10, 3))
    a = shapley_exact(f, [2.0, 2.0, 5.0], bg[:, [0, 0, 2]])
    assert a.phi[0] == pytest.approx(a.phi[1], abs=1e-12)
    assert a.phi[2] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exact_matches_two_brute_force_oracles(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    f = nonlinear(rng, k)
    x, bg = rng.normal(size=k), rng.normal(size=(6, k))
    a = shapley_exact(f, x, bg)
    v = interventional_value(f, x, bg)
    np.testing.assert_allclose(a.phi, shapley_by_permutations(v, k), atol=1e-9)
    np.testing.assert_allclose(a.phi, shapley_by_subsets(v, k), atol=1e-9)
    assert abs(a.residual) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_linear_analytic(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 9))
    w = rng.normal(size=k)
    x, bg = rng.normal(size=k), rng.normal(size=(20, k))
    a = shapley_exact(linear(w, 1.5), x, bg)
    np.testing.assert_allclose(a.phi, w * (x - bg.mean(axis=0)), atol=1e-9)


def test_exact_limits():
    with pytest.raises(TooManyFeatures):
        shapley_exact(linear(np.ones(21)), np.ones(21), np.zeros((1, 21)))
    with pytest.raises(EmptyBackground):
        shapley_exact(linear([1.0]), [1.0], np.zeros((0, 1)))
    with pytest.raises(EmptyBackground):
        shapley_sampled(linear([1.0]), [1.0], np.zeros((0, 1)))


def test_sampled_additivity_determinism_and_permutation_floor():
    rng = np.random.default_rng(2)
    f = nonlinear(rng, 6)
    x, bg = rng.normal(size=6), rng.normal(size=(20, 6))
    a = shapley_sampled(f, x, bg, 50, seed=3)
    b = shapley_sampled(f, x, bg, 50, seed=3)
    assert a.phi.tobytes() == b.phi.tobytes()
    assert abs(a.residual) < 1e-9
    assert a.std_error.shape == (6,)
    with pytest.raises(ValueError):
        shapley_sampled(f, x, bg, 9)


def test_sampled_standard_error_rate():
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        f = nonlinear(rng, 8)
        x, bg = rng.normal(size=8), rng.normal(size=(30, 8))
        se1 = shapley_sampled(f, x, bg, 100, seed).std_error
        se2 = shapley_sampled(f, x, bg, 200, seed).std_error
        mask = se1 > 1e-12  # additive models have zero spread
        ratios.extend(se2[mask] / se1[mask])
    expected = 1 / np.sqrt(2)
    assert expected / 1.5 < np.mean(ratios) < expected * 1.5


def test_sampled_close_to_exact():
    rng = np.random.default_rng(5)
    f = nonlinear(rng, 7)
    x, bg = rng.normal(size=7), rng.normal(size=(25, 7))
    exact = shapley_exact(f, x, bg).phi
    est = shapley_sampled(f, x, bg, 400, seed=1)
    assert np.mean(np.abs(est.phi - exact) <= 3 * est.std_error + 1e-9) >= 0.8


def test_global_importance_cases():
    a = Attribution(0, 0.0, np.array([0.5, -2.0, 1.0]), -0.5, ["a", "b", "c"])
    g = global_importance([a])
    assert [n for n, _ in g.ranked()] == ["b", "c", "a"]
    assert g.rank_of("a") == 3
    neg = Attribution(1, 0.0, -a.phi, 0.5, ["a", "b", "c"])
    np.testing.assert_array_equal(global_importance([a, neg]).importance, np.abs(a.phi))
    with pytest.raises(Inconsistent):
        global_importance([a, Attribution(2, 0.0, np.zeros(2), 0.0, ["a", "b"])])
    with pytest.raises(Inconsistent):
        global_importance([])


def test_global_importance_ties_by_index():
    a = Attribution(0, 0.0, np.array([1.0, -1.0, 1.0]), 1.0)
    assert list(global_importance([a]).order) == [0, 1, 2]


def test_linear_standardized_ranking_matches_weights():
    rng = np.random.default_rng(7)
    w = np.array([0.3, -2.0, 1.1, 0.0, 0.7])
    X = rng.normal(size=(400, 5))
    X = (X - X.mean(0)) / X.std(0)
    atts = explain_samples(linear(w), X[:80], X[200:300], exact=True)
    assert list(global_importance(atts).order) == list(np.argsort(-np.abs(w), kind="stable"))


def test_waterfall_buckets():
    a = Attribution(4, 1.0, np.array([0.5, -2.0, 0.25]), -0.25, ["a", "b", "c"])
    full = waterfall_data(a, top_k=3)
    assert [c["feature"] for c in full["contributions"]] == ["b", "a", "c"]
    one = waterfall_data(a, top_k=1)
    assert len(one["contributions"]) == 2
    bucket = one["contributions"][1]["phi"]
    assert bucket == pytest.approx(a.prediction - a.base_value - (-2.0))
    assert one["base_value"] + sum(c["phi"] for c in one["contributions"]) == pytest.approx(a.prediction)
    with pytest.raises(ValueError):
        waterfall_data(a, top_k=0)


def test_per_sample_seeds_schedule_independent():
    rng = np.random.default_rng(8)
    f = nonlinear(rng, 5)
    X, bg = rng.normal(size=(4, 5)), rng.normal(size=(10, 5))
    fwd = explain_samples(f, X, bg, 20, seed=9, sample_ids=[0, 1, 2, 3])
    rev = explain_samples(f, X[::-1], bg, 20, seed=9, sample_ids=[3, 2, 1, 0])
    for a, b in zip(fwd, rev[::-1]):
        assert a.phi.tobytes() == b.phi.tobytes()


def test_background_selection():
    X = np.arange(500.0).reshape(250, 2)
    bg = select_background(X, 100, seed=1)
    assert bg.shape == (100, 2) and len(np.unique(bg[:, 0])) == 100
    np.testing.assert_array_equal(bg, select_background(X, 100, seed=1))
    assert select_background(X[:5], 100).shape == (5, 2)


def test_exports(tmp_path):
    atts = [Attribution(i, 1.0, np.array([0.5, -0.5]), 1.0, ["a", "b"]) for i in range(2)]
    write_attributions_csv(atts, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "sample,feature,phi,base,prediction"
    write_summary_dots_csv(atts, np.ones((2, 2)), tmp_path / "d.csv")
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 5
    write_waterfall_json(waterfall_data(atts[0]), tmp_path / "w.json")
    assert json.loads((tmp_path / "w.json").read_text())["sample"] == 0
