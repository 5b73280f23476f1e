import itertools
import math

import numpy as np
import pytest

from conftest import make_dataset
from pdsurrogate.data import Dataset, FeatureSpec
from pdsurrogate.explain import (TableTooLarge, decision_table, global_effects, instance_dataset,
                                 interaction_cell_map, local_explain)
from pdsurrogate.pipeline import MaidrrConfig, autotune, fit_surrogate, log_grid
from pdsurrogate.segment import Grouping
from pdsurrogate import synth

ASSET = FeatureSpec("asset", "nominal", ("bond", "stock"))
TERM = FeatureSpec("term", "nominal", ("short", "long"))


def nominal_grouping(spec):
    m = len(spec.levels)
    return Grouping(spec.name, m, np.arange(m), np.zeros(m), 0.0, False, np.arange(m, dtype=float),
                    np.full(m, 1.0 / m), np.zeros(m), (spec,))


def figure_one_model():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 3, dtype=float)
    ret = 2.0 + 4.0 * X[:, 0] + 3.0 * X[:, 1]
    ds = Dataset((ASSET, TERM), X, ret, np.ones(len(X)))
    return ds, fit_surrogate(ds, [nominal_grouping(ASSET), nominal_grouping(TERM)], family="normal_identity")


def test_figure_one_table():
    _, model = figure_one_model()
    table = decision_table(model)
    assert table.features == ["asset", "term"]
    assert table.labels == [("bond", "short"), ("bond", "long"), ("stock", "short"), ("stock", "long")]
    np.testing.assert_allclose(table.rate, [2.0, 5.0, 6.0, 9.0], atol=1e-12)


def test_figure_one_local_is_additive():
    ds, model = figure_one_model()
    ex = local_explain(model, ds, row=3)
    assert ex.baseline == pytest.approx(2.0) and ex.reconstruct() == pytest.approx(9.0, abs=1e-12)
    assert [c.factor for c in ex.contributions] == pytest.approx([4.0, 3.0])


@pytest.fixture(scope="module")
def synth_model():
    ds = synth.make_synthetic(6000, 1)
    cfg = MaidrrConfig(lambda_grid_marg=log_grid(1e-6, 1, 13), lambda_grid_intr=log_grid(1e-6, 1, 7))
    return ds, autotune(synth.true_oracle(), ds, cfg)


def test_synth_model_shape(synth_model):
    _, model = synth_model
    assert model.I == [("fuel", "cover")]
    assert "noise_num" not in model.F


def test_reconstruction_random_instances(synth_model):
    ds, model = synth_model
    rng = np.random.default_rng(0)
    rows = rng.integers(0, ds.n, 1000)
    t = rng.uniform(0.1, 2.0, 1000)
    pred = model.predict(ds.subset(rows), exposure=t)
    for r, ti, p in zip(rows, t, pred):
        ex = local_explain(model, ds, int(r), exposure=float(ti))
        assert ex.reconstruct() == pytest.approx(p, rel=1e-10)
        assert ex.prediction == pytest.approx(p, rel=1e-12)
        kinds = {c.term: c.kind for c in ex.contributions}
        assert kinds["noise_num"] == "not selected" and kinds["fuel:cover"] == "interaction"


def representative(model, table_row_codes):
    """Raw feature values whose marginal groups match the table row."""
    values = {}
    for g, code in zip(model.marginal_groupings, table_row_codes):
        values[g.feature] = g.grid[np.flatnonzero(g.assignment == code)[0]]
    return values


def test_table_matches_predictions_exhaustively(synth_model):
    ds, model = synth_model
    table = decision_table(model)
    assert len(table) == math.prod(g.k for g in model.marginal_groupings) <= 10_000
    idx = {f.name: j for j, f in enumerate(ds.features)}
    X = np.zeros((len(table), ds.p))
    for i, row in enumerate(table.codes):
        for name, v in representative(model, row).items():
            X[i, idx[name]] = v
    probe = Dataset(ds.features, X, np.zeros(len(table)), np.ones(len(table)))
    np.testing.assert_allclose(table.rate, model.predict_rate(probe), rtol=1e-12)


def test_table_exposure_weighted_total_equals_claims(synth_model):
    ds, model = synth_model
    table = decision_table(model)
    seg = model.segment(ds)
    lookup = {tuple(r): i for i, r in enumerate(table.codes.tolist())}
    cells = np.array([lookup[tuple(seg.codes[g.name][i] for g in model.marginal_groupings)] for i in range(ds.n)])
    expo = np.bincount(cells, weights=ds.exposure, minlength=len(table))
    assert float(np.dot(table.rate, expo)) == pytest.approx(ds.y.sum(), rel=1e-6)


def test_interaction_cell_majority():
    a = nominal_grouping(FeatureSpec("a", "nominal", ("p", "q")))
    b = Grouping("b", 1, np.array([0, 0]), np.zeros(1), 0.0, True, np.array([0.0, 1.0]), np.array([0.5, 0.5]),
                 np.zeros(2), (FeatureSpec("b", "continuous"),))
    pair = Grouping(("a", "b"), 2, np.array([0, 1, 1, 0]), np.zeros(2), 0.0, False,
                    np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float), np.array([0.1, 0.3, 0.2, 0.2]),
                    np.zeros(4))
    assert interaction_cell_map(pair, a, b) == {(0, 0): 1, (1, 0): 0}


def test_intercept_only_table():
    ds = make_dataset([[0.0], [1.0]], [FeatureSpec("x", "continuous")], [1, 2], [2.0, 1.0])
    with pytest.warns(UserWarning):
        model = fit_surrogate(ds, [])
    table = decision_table(model)
    assert len(table) == 1 and table.rate[0] == pytest.approx(1.0)


def test_table_cap():
    _, model = figure_one_model()
    with pytest.raises(TableTooLarge) as exc:
        decision_table(model, cap=3)
    assert exc.value.rows == 4 and exc.value.sizes == {"asset": 2, "term": 2}


def test_global_effects(synth_model):
    _, model = synth_model
    effects = global_effects(model)
    for term in model.glm.design.terms:
        mine = [e for e in effects if e.term == term.name]
        assert len(mine) == len(term.labels)
        refs = [e for e in mine if e.reference]
        assert len(refs) == 1 and refs[0].factor == 1.0 and refs[0].ci_low is None
    assert all(e.factor > 0 for e in effects)
    for e in effects:
        if not e.reference:
            assert e.factor == pytest.approx(math.exp(e.beta)) and e.ci_low < e.factor < e.ci_high


def test_reference_instance_has_unit_factors(synth_model):
    ds, model = synth_model
    values = {}
    for g in model.marginal_groupings:
        term = model.glm.design.term(g.name)
        values[g.feature] = g.grid[np.flatnonzero(g.assignment == term.reference)[0]]
    raw = {}
    for j, spec in enumerate(ds.features):
        v = values.get(spec.name, ds.X[0, j])
        raw[spec.name] = spec.levels[int(v)] if spec.is_categorical else v
    one = instance_dataset(model, raw, exposure=0.5)
    ex = local_explain(model, one)
    marg = [c for c in ex.contributions if c.kind == "marginal"]
    assert all(c.factor == 1.0 for c in marg)
    inter = [c for c in ex.contributions if c.kind == "interaction"]
    expected = 0.5 * math.exp(model.glm.beta[0]) * math.prod(c.factor for c in inter)
    assert ex.prediction == pytest.approx(expected, rel=1e-12)


def test_bar_csv_and_instance_errors(tmp_path, synth_model):
    ds, model = synth_model
    ex = local_explain(model, ds, 5)
    ex.write_bar_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "label,factor,ci_low,ci_high" and len(lines) == 2 + len(ex.contributions)
    with pytest.raises(KeyError):
        instance_dataset(model, {"age": 30})
    with pytest.raises(ValueError):
        instance_dataset(model, {"age": 30, "fuel": "electric", "cover": "low", "noise_num": 1, "noise_cat": "A"})


def test_table_csv_percentages(tmp_path):
    _, model = figure_one_model()
    table = decision_table(model)
    table.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "asset,term,rate,rate_pct"
    assert lines[1].endswith(",200.00")
