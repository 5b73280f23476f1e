import numpy as np

from pdsurrogate import synth


def test_shape_and_determinism():
    a = synth.make_synthetic(500, 3)
    b = synth.make_synthetic(500, 3)
    assert a.n == 500 and a.names == ["age", "fuel", "cover", "noise_num", "noise_cat"]
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, synth.make_synthetic(500, 4).y)


def test_true_rate_structure():
    X = np.array([[18, 1, 0, 0, 0], [30, 1, 0, 0, 0], [60, 1, 0, 0, 0], [29, 0, 2, 0, 0], [29, 0, 2, 40, 3]],
                 dtype=float)
    r = synth.true_log_rate(X) - synth.BASE_LOG_RATE
    np.testing.assert_allclose(r, [0.5, 0.0, 0.3, 0.5 + 0.4 + 0.5 + 0.7, 0.5 + 0.4 + 0.5 + 0.7])


def test_claim_frequency_matches_generator():
    ds = synth.make_synthetic(20_000, 0)
    expected = np.sum(ds.exposure * synth.true_rate(ds.X))
    assert abs(ds.y.sum() - expected) < 4 * np.sqrt(expected)


def test_truth_descriptor():
    t = synth.truth()
    assert t["k"] == {"age": 3, "fuel": 2, "cover": 3}
    assert t["pair"] == ("fuel", "cover") and set(t["noise"]) == {"noise_num", "noise_cat"}
