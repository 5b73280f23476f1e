import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from pdsurrogate.blackbox import FunctionOracle
from pdsurrogate.data import FeatureSpec
from pdsurrogate.evaluate import (EvalReport, benchmark_lm, benchmark_tree, correlations, delta_deviance,
                                  evaluate_surrogates, fidelity_r2)
from pdsurrogate.pipeline import MaidrrConfig, autotune, log_grid


def test_delta_deviance_basics():
    y = np.array([0.0, 1.0, 2.0, 0.0])
    bb = np.array([0.3, 0.9, 1.5, 0.2])
    assert delta_deviance(bb, bb, y) == 0.0
    with pytest.raises(ValueError):
        delta_deviance(bb, y + 0.0 + (y == 0), y + (y == 0))  # perfect black box


@given(st.lists(st.tuples(st.integers(0, 5), st.floats(0.1, 4), st.floats(1.05, 3)), min_size=1, max_size=30))
def test_pointwise_worse_surrogate_has_positive_loss(rows):
    y = np.array([r[0] for r in rows], dtype=float)
    bb = np.array([r[1] for r in rows])
    f = np.array([r[2] for r in rows])
    if np.allclose(bb, y):
        return
    # move each prediction further from y along the same direction (per-row deviance is convex with minimum at y)
    s = np.where(bb >= y, y + (bb - y) * f, np.maximum(y - (y - bb) * f, bb / f))
    s = np.where(y == 0, bb * f, s)
    assert delta_deviance(s, bb, y) > 0


def test_r2_examples():
    assert fidelity_r2([1, 2, 3], [1, 2, 3]) == 1.0
    assert fidelity_r2([2, 2, 2], [1, 2, 3]) == 0.0
    assert fidelity_r2([1, 2, 4], [1, 2, 3]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        fidelity_r2([1, 2], [3, 3])


def test_correlation_examples():
    assert correlations([1, 2, 3], [1, 2, 3]) == pytest.approx((1, 1, 1))
    assert correlations([3, 2, 1], [1, 2, 3]) == pytest.approx((-1, -1, -1))
    b = np.linspace(0, 5, 20)
    pe, sp, avg = correlations(np.exp(b), b)
    assert sp == 1.0 and pe < 1 and avg == pytest.approx((pe + sp) / 2)
    with pytest.raises(ValueError):
        correlations([1, 1, 1], [1, 2, 3])


def test_spearman_average_ranks_for_ties():
    from scipy import stats
    s = np.array([1, 2, 2, 3, 5.0])
    b = np.array([2, 1, 4, 4, 6.0])
    assert correlations(s, b)[1] == pytest.approx(stats.spearmanr(s, b)[0], abs=1e-14)


SPECS = (FeatureSpec("x", "continuous"), FeatureSpec("c", "nominal", ("a", "b", "c")),
         FeatureSpec("z", "continuous"))


def raw(seed=0, n=400):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(0, 10, n), rng.integers(0, 3, n), rng.integers(0, 6, n)])
    return make_dataset(X, SPECS, rng.poisson(1.0, n), rng.uniform(0.5, 1, n))


def test_lm_recovers_linear_black_box():
    ds = raw()
    target = 1.0 + 0.3 * ds.X[:, 0] - 0.5 * (ds.X[:, 1] == 2) + 0.1 * ds.X[:, 2]
    pred, lm = benchmark_lm(ds, target)
    assert fidelity_r2(pred, target) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(lm.predict(ds), pred, rtol=1e-12)


def test_lm_constant_target():
    ds = raw()
    pred, _ = benchmark_lm(ds, np.full(ds.n, 0.4))
    np.testing.assert_allclose(pred, 0.4, atol=1e-10)
    with pytest.raises(ValueError):
        fidelity_r2(pred, np.full(ds.n, 0.4))


def test_tree_single_binary_feature_exact():
    ds = raw()
    target = np.where(ds.X[:, 1] == 1, 0.8, 0.2)
    pred, tree = benchmark_tree(ds, target)
    assert fidelity_r2(pred, target) == pytest.approx(1.0, abs=1e-12)
    assert tree.depth == 1 and tree.n_leaves() == 2


def test_tree_constant_and_leaf_bound():
    ds = raw()
    _, tree = benchmark_tree(ds, np.full(ds.n, 0.3))
    assert tree.n_leaves() == 1
    target = np.exp(np.sin(ds.X[:, 0]) + 0.3 * ds.X[:, 2] * (ds.X[:, 1] - 1))
    pred, tree = benchmark_tree(ds, target)
    assert tree.depth <= 4 and len(np.unique(pred)) <= 16


def test_evaluate_report_structure(tmp_path):
    fn = lambda X: np.exp(-0.5 + 0.1 * X[:, 0] + 0.4 * (X[:, 1] == 2))  # noqa: E731
    base = raw(2, 800)
    y = np.random.default_rng(3).poisson(fn(base.X) * base.exposure)
    ds = make_dataset(base.X, SPECS, y, base.exposure)
    orc = FunctionOracle(fn)
    model = autotune(orc, ds, MaidrrConfig(lambda_grid_marg=log_grid(1e-6, 1, 6),
                                           lambda_grid_intr=log_grid(1e-6, 1, 3)))
    rep = evaluate_surrogates(model, orc, ds, dataset_name="toy")
    assert model.F
    assert set(rep.models) == {"glm", "lm", "dt"} and rep.n_eval == ds.n
    for m in rep.models.values():
        assert m.r2 <= 1 and -1 <= m.pearson <= 1 and -1 <= m.spearman <= 1
        assert m.rho_avg == pytest.approx((m.pearson + m.spearman) / 2)
    held = evaluate_surrogates(model, orc, ds, holdout=0.25, seed=1)
    assert held.n_eval == 200
    rep.write_table(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "metric,model,toy" and len(lines) == 1 + 5 * 3
    assert isinstance(EvalReport().to_dict(), dict)
