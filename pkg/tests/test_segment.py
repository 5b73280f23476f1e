import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import best_partition, penalized_argmin, weighted_ss
from pdsurrogate.data import FeatureSpec
from pdsurrogate.effects import EffectProfile
from pdsurrogate.segment import (CoverageError, Grouping, PenaltyConfig, cluster_1d, map_values, penalized_loss,
                                 segment_dataset, select_all_k, select_k)
from conftest import make_dataset

FOUR = np.array([1.0, 2.0, 10.0, 11.0])
EQ4 = np.full(4, 0.25)


def profile(z, w=None, kind="continuous"):
    z = np.asarray(z, dtype=float)
    w = np.full(len(z), 1.0 / len(z)) if w is None else np.asarray(w, dtype=float)
    spec = FeatureSpec("f", kind, tuple(f"l{i}" for i in range(len(z))) if kind != "continuous" else None)
    return EffectProfile("f", np.arange(len(z), dtype=float), z, w / w.sum(), "pd_marginal", (spec,))


def test_four_point_two_groups():
    g = cluster_1d(FOUR, EQ4, 2)
    assert g.assignment.tolist() == [0, 0, 1, 1]
    assert g.wmse == pytest.approx(0.25, abs=1e-15)
    assert g.group_effect.tolist() == [1.5, 10.5]


def test_k_equals_m_is_exact():
    g = cluster_1d([3.0, -1.0, 7.0], [1, 2, 3], 3)
    assert g.wmse == 0.0
    assert sorted(g.assignment.tolist()) == [0, 1, 2]


def test_adjacency_tie_gives_first_group_fewer_members():
    g = cluster_1d([5.0, 1.0, 5.0], [1, 1, 1], 2, adjacency=True, order=[0, 1, 2])
    assert g.assignment.tolist() == [0, 1, 1]
    # both contiguous splits cost (1/3)[(1-3)^2 + (5-3)^2] = 8/3
    assert g.wmse == pytest.approx(8.0 / 3.0, rel=1e-12)


def test_cluster_errors():
    with pytest.raises(ValueError):
        cluster_1d([1.0, 2.0], [1, 1], 3)
    with pytest.raises(ValueError):
        cluster_1d([1.0, 2.0], [1, 0], 1)
    with pytest.raises(ValueError):
        cluster_1d([1.0, 2.0], [1, 1], 1, adjacency=True)


def test_penalized_loss_values():
    g1 = cluster_1d(FOUR, EQ4, 1)
    g2 = cluster_1d(FOUR, EQ4, 2)
    assert penalized_loss(g1, 7.0) == g1.wmse
    assert penalized_loss(g2, 1.0) == pytest.approx(0.25 + math.log10(2), abs=1e-12)
    assert penalized_loss(g2, 0.0) == g2.wmse


def test_select_k_four_point_losses_match_brute_force():
    # brute force: k=1 -> 20.5, k=2 -> 0.25+log10 2, k=3 -> 0.125+log10 3, k=4 -> log10 4
    expected = {1: 20.5, 2: 0.25 + math.log10(2), 3: 0.125 + math.log10(3), 4: math.log10(4)}
    for k, v in expected.items():
        assert best_partition(FOUR, EQ4, k, False) + math.log10(k) == pytest.approx(v, abs=1e-12)
    g = select_k(profile(FOUR), PenaltyConfig(1.0, 4), adjacency=False)
    assert g.k == 2
    for k, v in expected.items():
        assert g.losses[k] == pytest.approx(v, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 1.0, 1e6])
@pytest.mark.parametrize("adjacency", [False, True])
def test_select_k_matches_exhaustive(lam, adjacency):
    k_star, loss = penalized_argmin(FOUR, EQ4, lam, 4, adjacency)
    g = select_k(profile(FOUR), PenaltyConfig(lam, 4), adjacency)
    assert g.k == k_star
    assert penalized_loss(g, lam) == pytest.approx(loss, abs=1e-12)


def test_select_k_extremes():
    assert select_k(profile(FOUR), PenaltyConfig(1e6, 15), False).k == 1
    assert select_k(profile(FOUR), PenaltyConfig(0.0, 15), False).k == 4
    assert select_k(profile(FOUR), PenaltyConfig(0.0, 3), False).k == 3


def test_penalty_config_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(-1.0)
    with pytest.raises(ValueError):
        PenaltyConfig(1.0, 0)


@given(st.integers(1, 8).flatmap(lambda m: st.tuples(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=m, max_size=m),
    st.lists(st.floats(0.01, 3), min_size=m, max_size=m),
    st.integers(1, min(4, m)),
    st.booleans())))
def test_dp_is_optimal(case):
    z, w, k, adjacency = case
    order = np.arange(len(z)) if adjacency else None
    g = cluster_1d(z, w, k, adjacency=adjacency, order=order)
    assert g.wmse == pytest.approx(best_partition(z, w, k, adjacency), abs=1e-9)
    # every group non-empty, effects are weighted means of members
    wn = np.asarray(w) / np.sum(w)
    for c in range(k):
        sel = g.assignment == c
        assert sel.any()
        assert g.group_effect[c] == pytest.approx(np.dot(wn[sel], np.asarray(z)[sel]) / wn[sel].sum(), abs=1e-12)
    if adjacency:
        assert np.all(np.diff(g.assignment) >= 0)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=12), st.booleans())
def test_wmse_non_increasing_in_k(z, adjacency):
    prof = profile(z)
    sols = select_all_k(prof, 15, adjacency)
    wm = [g.wmse for g in sols]
    assert all(b <= a + 1e-12 for a, b in zip(wm, wm[1:]))


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=10),
       st.lists(st.floats(0.05, 2), min_size=10, max_size=10), st.floats(0.1, 100))
def test_weight_scaling_invariance(z, w, c):
    w = w[:len(z)]
    a = cluster_1d(z, w, min(3, len(z)))
    b = cluster_1d(z, np.asarray(w) * c, min(3, len(z)))
    assert a.assignment.tolist() == b.assignment.tolist()


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=10),
       st.floats(1e-6, 1.0), st.floats(1.0, 10.0), st.booleans())
def test_k_monotone_in_lambda(z, lam, factor, adjacency):
    prof = profile(z)
    lo = select_k(prof, PenaltyConfig(lam), adjacency)
    hi = select_k(prof, PenaltyConfig(lam * factor), adjacency)
    assert hi.k <= lo.k


def test_unrestricted_equals_set_partition_bruteforce():
    rng = np.random.default_rng(11)
    for _ in range(30):
        m = int(rng.integers(2, 8))
        z = rng.normal(size=m)
        w = rng.uniform(0.1, 1, m)
        k = int(rng.integers(1, min(4, m) + 1))
        assert cluster_1d(z, w, k).wmse == pytest.approx(best_partition(z, w, k, False), abs=1e-12)


def test_labels_and_segmenting():
    spec = FeatureSpec("x", "continuous")
    g = Grouping("x", 2, np.array([0, 0, 1, 1]), np.array([1.5, 10.5]), 0.25, True,
                 np.array([1.0, 2.0, 10.0, 11.0]), np.full(4, 0.25), FOUR, (spec,))
    assert g.labels() == ["[1, 2]", "[10, 11]"]
    ds = make_dataset([[1.0], [11.0], [2.0]], [spec])
    assert map_values(g, ds).tolist() == [0, 1, 0]
    with pytest.raises(CoverageError):
        map_values(g, make_dataset([[5.0]], [spec]))
    assert map_values(g, make_dataset([[5.0], [7.0]], [spec]), strict=False).tolist() == [0, 1]
    seg = segment_dataset(ds, [g])
    assert seg.terms == ["x"] and seg.labels["x"] == ["[1, 2]", "[10, 11]"]


def test_categorical_labels_and_roundtrip():
    spec = FeatureSpec("c", "nominal", ("a", "b", "c"))
    g = Grouping("c", 2, np.array([1, 0, 1]), np.array([0.1, 0.9]), 0.0, False,
                 np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]), np.array([0.9, 0.1, 0.9]), (spec,))
    assert g.labels() == ["b", "a & c"]
    back = Grouping.from_dict(g.to_dict(), (spec,))
    assert back.assignment.tolist() == g.assignment.tolist()
    assert back.weight.tolist() == g.weight.tolist()
    assert back.labels() == g.labels()
    unknown = make_dataset([[0.0]], [FeatureSpec("c", "nominal", ("a", "b", "c", "d"))])
    assert map_values(g, unknown).tolist() == [1]


def test_weighted_ss_reference_matches_grouping():
    rng = np.random.default_rng(5)
    z, w = rng.normal(size=6), rng.uniform(0.2, 1, 6)
    g = cluster_1d(z, w, 3)
    blocks = [list(np.flatnonzero(g.assignment == c)) for c in range(3)]
    assert g.wmse == pytest.approx(weighted_ss(z, w, blocks), abs=1e-14)
