import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from oracles import brute_h, brute_pd, brute_pd2
from pdsurrogate.blackbox import FunctionOracle
from pdsurrogate.data import FeatureSpec
from pdsurrogate.effects import (ale_univariate, h_cutoff, h_statistic, h_statistic_detail, pd_interaction_pure,
                                 pd_joint, pd_univariate, screen_pairs)

C3 = (FeatureSpec("x1", "continuous"), FeatureSpec("x2", "continuous"), FeatureSpec("x3", "continuous"))


def random_ds(rng, n=60, levels=(5, 4, 3)):
    X = np.column_stack([rng.integers(0, m, n) for m in levels]).astype(float)
    return make_dataset(X, C3[:len(levels)])


def test_constant_oracle_pd():
    ds = random_ds(np.random.default_rng(0))
    prof = pd_univariate(FunctionOracle(lambda X: np.full(len(X), 0.7)), ds, "x1")
    np.testing.assert_allclose(prof.effect, 0.7, rtol=1e-14)
    assert prof.weight.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(prof.grid) > 0)


def test_pd_sum_hand_case():
    # x2 in {0, 2} equally often -> PD_1(v) = v + 1
    X = np.array([[0, 0], [1, 2], [3, 0], [5, 2]], dtype=float)
    ds = make_dataset(X, C3[:2])
    prof = pd_univariate(FunctionOracle(lambda X: X[:, 0] + X[:, 1]), ds, "x1")
    assert prof.grid.tolist() == [0, 1, 3, 5]
    np.testing.assert_allclose(prof.effect, prof.grid + 1.0, atol=1e-15)


@given(st.integers(0, 10_000))
def test_pd_matches_definition(seed):
    rng = np.random.default_rng(seed)
    ds = random_ds(rng, n=25)
    coef = rng.normal(size=3)
    fn = lambda X: np.exp(X @ coef * 0.3) + X[:, 0] * X[:, 2]  # noqa: E731
    for j, name in enumerate(ds.names):
        grid, ref = brute_pd(fn, ds.X, j)
        prof = pd_univariate(FunctionOracle(fn), ds, name)
        np.testing.assert_array_equal(prof.grid, grid)
        np.testing.assert_allclose(prof.effect, ref, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10_000))
def test_additive_pd_closed_form(seed):
    rng = np.random.default_rng(seed)
    ds = random_ds(rng)
    g = rng.normal(size=5)
    h = rng.normal(size=(4, 3))
    fn = lambda X: g[X[:, 0].astype(int)] + h[X[:, 1].astype(int), X[:, 2].astype(int)]  # noqa: E731
    prof = pd_univariate(FunctionOracle(fn), ds, "x1")
    expected = g[prof.grid.astype(int)] + np.mean(h[ds.X[:, 1].astype(int), ds.X[:, 2].astype(int)])
    np.testing.assert_allclose(prof.effect, expected, atol=1e-10)


def test_pd_row_order_invariant():
    rng = np.random.default_rng(4)
    ds = random_ds(rng)
    fn = FunctionOracle(lambda X: np.exp(0.2 * X[:, 0] - 0.1 * X[:, 1] * X[:, 2]))
    perm = rng.permutation(ds.n)
    a = pd_univariate(fn, ds, "x2")
    b = pd_univariate(fn, ds.subset(perm), "x2")
    np.testing.assert_allclose(a.effect, b.effect, rtol=1e-14)
    np.testing.assert_array_equal(a.weight, b.weight)


def test_weighted_mean_of_pd_equals_counterfactual_mean():
    rng = np.random.default_rng(8)
    ds = random_ds(rng, n=30)
    fn = lambda X: np.exp(0.3 * X[:, 0]) * (1 + X[:, 1])  # noqa: E731
    prof = pd_univariate(FunctionOracle(fn), ds, "x1")
    # counterfactual ensemble: every row with x1 replaced by a value drawn with the grid's weights
    total = 0.0
    for v, w in zip(prof.grid, prof.weight):
        Xc = ds.X.copy()
        Xc[:, 0] = v
        total += w * fn(Xc).mean()
    assert np.dot(prof.weight, prof.effect) == pytest.approx(total, rel=1e-12)


def test_pure_interaction_constant_oracle_is_minus_c():
    ds = random_ds(np.random.default_rng(1))
    prof = pd_interaction_pure(FunctionOracle(lambda X: np.full(len(X), 2.5)), ds, "x1", "x2")
    np.testing.assert_allclose(prof.effect, -2.5, atol=1e-15)
    assert prof.weight.sum() == pytest.approx(1.0, abs=1e-12)


def test_pure_interaction_additive_two_features_equals_minus_mean():
    rng = np.random.default_rng(2)
    ds = random_ds(rng, levels=(5, 4))
    fn = lambda X: X[:, 0] ** 2 + 3 * X[:, 1]  # noqa: E731
    prof = pd_interaction_pure(FunctionOracle(fn), ds, "x1", "x2")
    np.testing.assert_allclose(prof.effect, -fn(ds.X).mean(), atol=1e-12)


@given(st.integers(0, 10_000))
def test_pure_interaction_additive_has_zero_range(seed):
    rng = np.random.default_rng(seed)
    ds = random_ds(rng)
    g, h, k = rng.normal(size=5), rng.normal(size=4), rng.normal(size=3)
    fn = lambda X: g[X[:, 0].astype(int)] + h[X[:, 1].astype(int)] * k[X[:, 2].astype(int)]  # noqa: E731
    prof = pd_interaction_pure(FunctionOracle(fn), ds, "x1", "x2")
    assert np.ptp(prof.effect) < 1e-9


def test_pure_interaction_product_is_not_constant():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    ds = make_dataset(X, C3[:2])
    prof = pd_interaction_pure(FunctionOracle(lambda X: X[:, 0] * X[:, 1]), ds, "x1", "x2")
    # PD2 = a*b, PD_a = a/2, PD_b = b/2
    np.testing.assert_allclose(prof.effect, [0.0, -0.5, -0.5, 0.0], atol=1e-15)
    assert np.ptp(prof.effect) > 0


def test_pd_joint_matches_definition():
    rng = np.random.default_rng(6)
    ds = random_ds(rng, n=20)
    fn = lambda X: np.sin(X[:, 0]) * X[:, 1] + X[:, 2]  # noqa: E731
    grid, pd2, w = pd_joint(FunctionOracle(fn), ds, "x1", "x3")
    ref_grid, ref = brute_pd2(fn, ds.X, 0, 2)
    np.testing.assert_array_equal(grid, ref_grid)
    np.testing.assert_allclose(pd2, ref, rtol=1e-12, atol=1e-14)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_h_additive_small_and_symmetric():
    rng = np.random.default_rng(9)
    ds = random_ds(rng)
    fn = FunctionOracle(lambda X: np.exp(0.1 * X[:, 0]) + X[:, 1] ** 2 + X[:, 2])
    h_ab = h_statistic(fn, ds, "x1", "x2")
    assert h_ab < 1e-6
    assert h_ab == h_statistic(fn, ds, "x2", "x1")


def test_h_constant_oracle_is_degenerate_zero():
    ds = random_ds(np.random.default_rng(10))
    hv = h_statistic_detail(FunctionOracle(lambda X: np.ones(len(X))), ds, "x1", "x2")
    assert hv.h == 0.0 and hv.degenerate


def test_h_product_close_to_one():
    X = np.array([[a, b] for a in (-1, 1) for b in (-1, 1)] * 5, dtype=float)
    ds = make_dataset(X, C3[:2])
    assert h_statistic(FunctionOracle(lambda X: X[:, 0] * X[:, 1]), ds, "x1", "x2") == pytest.approx(1.0)


@given(st.integers(0, 10_000))
def test_h_matches_bruteforce_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    ds = random_ds(rng, n=18, levels=(3, 3, 2))
    c = rng.normal(size=4)
    fn = lambda X: np.exp(c[0] * X[:, 0] * 0.3 + c[1] * X[:, 1] * 0.3) + c[2] * X[:, 0] * X[:, 2]  # noqa: E731
    orc = FunctionOracle(fn)
    h_ab = h_statistic(orc, ds, "x1", "x2")
    assert h_ab == h_statistic(orc, ds, "x2", "x1")
    assert 0.0 <= h_ab <= 1.0
    assert h_ab == pytest.approx(brute_h(fn, ds.X, 0, 1), abs=1e-9)


def test_h_cutoff_rule():
    # ECDF(0.2) = 0.5 does not exceed one half; ECDF(0.3) = 0.75 does
    assert h_cutoff([0.4, 0.1, 0.3, 0.2]) == 0.3
    assert h_cutoff([0.5, 0.5, 0.5]) == 0.5
    assert h_cutoff([0.7]) == 0.7
    assert h_cutoff([0.1, 0.2, 0.3]) == 0.2
    with pytest.raises(ValueError):
        h_cutoff([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_h_cutoff_keeps_at_least_half(values):
    h = h_cutoff(values)
    kept = sum(v >= h for v in values)
    assert kept >= 1
    assert np.mean(np.asarray(values) <= h) > 0.5
    # the next smaller value (if any) has not yet passed one half
    below = [v for v in values if v < h]
    if below:
        assert np.mean(np.asarray(values) <= max(below)) <= 0.5


def test_screen_pairs_caches_and_ranks():
    rng = np.random.default_rng(12)
    ds = random_ds(rng, n=80)
    orc = FunctionOracle(lambda X: 1 + X[:, 0] + X[:, 1] + 2 * X[:, 1] * X[:, 2])
    cache = {}
    scr = screen_pairs(orc, ds, ["x3", "x1", "x2"], joint_cache=cache)
    assert scr.pairs == [("x1", "x2"), ("x1", "x3"), ("x2", "x3")]
    assert set(cache) == set(scr.pairs)
    assert scr.h_values[0] < 1e-6
    assert ("x2", "x3") in scr.retained
    assert json.loads(json.dumps(scr.to_dict()))["cutoff"] == scr.cutoff
    explicit = screen_pairs(orc, ds, ["x1", "x2", "x3"], h=2.0)
    assert explicit.retained == []


def test_ale_linear_and_constant():
    rng = np.random.default_rng(13)
    x = rng.uniform(0, 10, 400)
    X = np.column_stack([x, rng.uniform(size=400)])
    ds = make_dataset(X, C3[:2])
    prof = ale_univariate(FunctionOracle(lambda X: 2.0 * X[:, 0]), ds, "x1", n_bins=10)
    expected = 2.0 * prof.grid - np.dot(prof.weight, 2.0 * prof.grid)
    np.testing.assert_allclose(prof.effect, expected, atol=1e-9)
    flat = ale_univariate(FunctionOracle(lambda X: np.full(len(X), 3.0)), ds, "x1")
    np.testing.assert_allclose(flat.effect, 0.0, atol=1e-15)


def test_ale_close_to_centered_pd_for_additive_model():
    rng = np.random.default_rng(14)
    X = np.column_stack([rng.uniform(0, 3, 3000), rng.uniform(size=3000)])
    ds = make_dataset(X, C3[:2])
    orc = FunctionOracle(lambda X: np.sin(2 * X[:, 0]) + X[:, 1])
    pd = pd_univariate(orc, ds.subset(np.arange(300)), "x1").centered()
    gaps = []
    for bins in (5, 40):
        ale = ale_univariate(orc, ds.subset(np.arange(300)), "x1", n_bins=bins)
        gaps.append(np.max(np.abs(ale.effect - pd.effect)))
    assert gaps[1] < gaps[0]
    assert gaps[1] < 0.02


def test_ale_merges_bins_with_warning():
    X = np.column_stack([np.repeat([0.0, 1.0, 2.0], 10), np.zeros(30)])
    ds = make_dataset(X, C3[:2])
    with pytest.warns(UserWarning, match="collapse"):
        prof = ale_univariate(FunctionOracle(lambda X: X[:, 0]), ds, "x1", n_bins=10)
    assert prof.meta["n_bins"] < 10


def test_ale_rejects_categorical():
    ds = make_dataset([[0.0], [1.0]], [FeatureSpec("c", "nominal", ("a", "b"))])
    with pytest.raises(ValueError):
        ale_univariate(FunctionOracle(lambda X: X[:, 0]), ds, "c")


def test_background_cap_only_for_rich_continuous():
    rng = np.random.default_rng(15)
    X = np.column_stack([rng.normal(size=500), rng.integers(0, 3, 500)])
    ds = make_dataset(X, C3[:2])
    fn = FunctionOracle(lambda X: X[:, 0] + X[:, 1] ** 2)
    full = pd_univariate(fn, ds, "x2")
    capped = pd_univariate(fn, ds, "x2", background_cap=50)
    np.testing.assert_array_equal(full.effect, capped.effect)  # x2 has 3 values: cap ignored
    rich = pd_univariate(fn, ds, "x1", background_cap=50, seed=1)
    assert rich.m == 500
    assert not np.allclose(rich.effect, pd_univariate(fn, ds, "x1").effect)


def test_profile_io(tmp_path):
    ds = random_ds(np.random.default_rng(16))
    prof = pd_univariate(FunctionOracle(lambda X: X[:, 0] * 0.5), ds, "x1")
    prof.write_csv(tmp_path / "p.csv")
    prof.write_json(tmp_path / "p.json")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "value,effect,weight" and len(lines) == prof.m + 1
    assert json.loads((tmp_path / "p.json").read_text())["kind"] == "pd_marginal"
    with pytest.raises(KeyError):
        prof.lookup(np.array([99.0]))
