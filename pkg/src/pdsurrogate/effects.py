"""Partial dependence, pure interaction effects, ALE and H-statistic screening.

All effects are computed on the grid of values observed in the data. The
averaging over background rows collapses duplicate rows of the
complementary features into counts; for a pure prediction function this is
the same average, only cheaper.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data import Dataset, FeatureSpec, format_number

logger = logging.getLogger(__name__)

PROFILE_KINDS = ("pd_marginal", "pd_interaction", "ale")

# background subsampling only kicks in for continuous features this rich
_CAP_MIN_UNIQUE = 200
_CHUNK_ROWS = 200_000


@dataclass(frozen=True, eq=False)
class EffectProfile:
    """An effect evaluated on a weighted grid of observed values.

    For interactions ``feature`` is a pair of names and ``grid`` is ``(m, 2)``.
    Grid values are stored encoded (level codes for categorical features).
    """

    feature: str | tuple[str, str]
    grid: np.ndarray
    effect: np.ndarray
    weight: np.ndarray
    kind: str
    specs: tuple[FeatureSpec, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")

    @property
    def m(self) -> int:
        return len(self.effect)

    @property
    def is_pair(self) -> bool:
        return isinstance(self.feature, tuple)

    def value_labels(self) -> list[str]:
        def fmt(spec, v):
            return spec.levels[int(v)] if spec.is_categorical else format_number(v)

        if self.is_pair:
            a, b = self.specs
            return [f"{fmt(a, va)}__{fmt(b, vb)}" for va, vb in self.grid]
        return [fmt(self.specs[0], v) for v in self.grid]

    def lookup(self, values: np.ndarray) -> np.ndarray:
        """Effect at (encoded) ``values``; every value must be on the grid."""
        idx = np.searchsorted(self.grid, values)
        idx = np.clip(idx, 0, self.m - 1)
        if np.any(self.grid[idx] != values):
            raise KeyError(f"values outside the grid of {self.feature!r}")
        return self.effect[idx]

    def centered(self) -> "EffectProfile":
        return EffectProfile(self.feature, self.grid, self.effect - np.dot(self.weight, self.effect),
                             self.weight, self.kind, self.specs, dict(self.meta))

    def to_rows(self) -> list[dict]:
        return [{"value": lab, "effect": float(e), "weight": float(w)}
                for lab, e, w in zip(self.value_labels(), self.effect, self.weight)]

    def to_dict(self) -> dict:
        feat = list(self.feature) if self.is_pair else self.feature
        return {"feature": feat, "kind": self.kind, "points": self.to_rows(), **self.meta}

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "effect", "weight"])
            for r in self.to_rows():
                w.writerow([r["value"], repr(r["effect"]), repr(r["weight"])])

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _background(ds: Dataset, fixed: Sequence[int], cap: int | None, seed: int):
    """Unique background rows (with the ``fixed`` columns zeroed) and their counts."""
    X = ds.X
    n = ds.n
    if cap is not None and n > cap and any(
        ds.features[j].kind == "continuous" and len(np.unique(X[:, j])) > _CAP_MIN_UNIQUE for j in fixed
    ):
        rows = np.sort(np.random.default_rng(seed).choice(n, size=cap, replace=False))
        X = X[rows]
    Xb = X.copy()
    Xb[:, list(fixed)] = 0.0
    uniq, counts = np.unique(Xb, axis=0, return_counts=True)
    return uniq, counts.astype(np.float64), float(X.shape[0])


def _average_over(oracle, uniq: np.ndarray, counts: np.ndarray, total: float,
                  fixed: Sequence[int], points: np.ndarray) -> np.ndarray:
    """Mean prediction over the background for each row of ``points``."""
    u = uniq.shape[0]
    points = np.atleast_2d(points)
    out = np.empty(points.shape[0])
    per = max(1, _CHUNK_ROWS // u)
    for s in range(0, points.shape[0], per):
        block = points[s:s + per]
        batch = np.tile(uniq, (block.shape[0], 1))
        for c, j in enumerate(fixed):
            batch[:, j] = np.repeat(block[:, c], u)
        pred = np.asarray(oracle.predict_rate(batch), dtype=np.float64).reshape(block.shape[0], u)
        out[s:s + per] = np.sum(pred * counts, axis=1) / total
    return out


def pd_univariate(oracle, ds: Dataset, j: str, *, background_cap: int | None = None,
                  seed: int = 0) -> EffectProfile:
    """Univariate partial dependence of feature ``j`` on its observed values."""
    jj = ds.index(j)
    grid, counts = np.unique(ds.X[:, jj], return_counts=True)
    uniq, bcounts, total = _background(ds, [jj], background_cap, seed)
    effect = _average_over(oracle, uniq, bcounts, total, [jj], grid[:, None])
    return EffectProfile(j, grid, effect, counts / ds.n, "pd_marginal", (ds.features[jj],))


def pd_joint(oracle, ds: Dataset, a: str, b: str, *, background_cap: int | None = None,
             seed: int = 0):
    """Two-dimensional PD on the jointly observed ``(a, b)`` value pairs.

    Returns ``(grid, pd2, weight)`` with ``grid`` shaped ``(m, 2)``.
    """
    ia, ib = ds.index(a), ds.index(b)
    grid, counts = np.unique(ds.X[:, [ia, ib]], axis=0, return_counts=True)
    uniq, bcounts, total = _background(ds, [ia, ib], background_cap, seed)
    pd2 = _average_over(oracle, uniq, bcounts, total, [ia, ib], grid)
    return grid, pd2, counts / ds.n


def pd_interaction_pure(oracle, ds: Dataset, a: str, b: str, *,
                        marginals: dict[str, EffectProfile] | None = None,
                        background_cap: int | None = None, seed: int = 0) -> EffectProfile:
    """Two-way PD minus both one-way PDs, on the jointly observed pairs."""
    if a == b:
        raise ValueError("interaction needs two distinct features")
    marginals = marginals or {}
    pa = marginals.get(a) or pd_univariate(oracle, ds, a, background_cap=background_cap, seed=seed)
    pb = marginals.get(b) or pd_univariate(oracle, ds, b, background_cap=background_cap, seed=seed)
    grid, pd2, weight = pd_joint(oracle, ds, a, b, background_cap=background_cap, seed=seed)
    effect = pd2 - (pa.lookup(grid[:, 0]) + pb.lookup(grid[:, 1]))
    specs = (ds.spec(a), ds.spec(b))
    return EffectProfile((a, b), grid, effect, weight, "pd_interaction", specs)


def ale_univariate(oracle, ds: Dataset, j: str, n_bins: int = 20) -> EffectProfile:
    """First-order accumulated local effects on quantile bins, centered.

    The accumulated effect is defined at the bin edges and linearly
    interpolated to every observed value of ``j``.
    """
    jj = ds.index(j)
    if ds.features[jj].kind != "continuous":
        raise ValueError(f"ALE needs a continuous feature, {j!r} is {ds.features[jj].kind}")
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    x = ds.X[:, jj]
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1)))
    if len(edges) < n_bins + 1:
        warnings.warn(f"{j}: {n_bins} quantile bins collapse to {max(len(edges) - 1, 1)} "
                      "because of repeated values; bins merged", stacklevel=2)
    if len(edges) < 2:
        grid, counts = np.unique(x, return_counts=True)
        return EffectProfile(j, grid, np.zeros(len(grid)), counts / ds.n, "ale", (ds.features[jj],))
    nb = len(edges) - 1
    which = np.clip(np.searchsorted(edges, x, side="left") - 1, 0, nb - 1)
    local = np.zeros(nb)
    for k in range(nb):
        rows = np.flatnonzero(which == k)
        if rows.size == 0:
            continue
        lo = ds.X[rows].copy()
        hi = ds.X[rows].copy()
        lo[:, jj] = edges[k]
        hi[:, jj] = edges[k + 1]
        diff = np.asarray(oracle.predict_rate(hi)) - np.asarray(oracle.predict_rate(lo))
        local[k] = diff.mean()
    acc = np.concatenate(([0.0], np.cumsum(local)))
    grid, counts = np.unique(x, return_counts=True)
    weight = counts / ds.n
    effect = np.interp(grid, edges, acc)
    effect = effect - np.dot(weight, effect)
    return EffectProfile(j, grid, effect, weight, "ale", (ds.features[jj],), {"n_bins": nb})


class HValue(NamedTuple):
    h: float
    degenerate: bool


def _h_from_parts(ds: Dataset, a: str, b: str, pa: EffectProfile, pb: EffectProfile,
                  grid: np.ndarray, pd2: np.ndarray, rows: np.ndarray | None) -> HValue:
    ia, ib = ds.index(a), ds.index(b)
    pair_idx = _row_pair_index(ds.X[:, [ia, ib]], grid)
    if rows is not None:
        pair_idx = pair_idx[rows]
    w = np.bincount(pair_idx, minlength=len(grid)).astype(np.float64)
    w /= w.sum()
    fa = pa.lookup(grid[:, 0])
    fb = pb.lookup(grid[:, 1])
    fab = pd2 - np.dot(w, pd2)
    fa = fa - np.dot(w, fa)
    fb = fb - np.dot(w, fb)
    den = float(np.dot(w, fab * fab))
    num = float(np.dot(w, (fab - fa - fb) ** 2))
    if den <= 0.0:
        return HValue(0.0, True)
    return HValue(float(np.sqrt(min(max(num / den, 0.0), 1.0))), False)


def _row_pair_index(Xab: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Index into ``grid`` (lexicographically sorted pairs) for each row."""
    keys = {(float(u), float(v)): q for q, (u, v) in enumerate(grid)}
    return np.fromiter((keys[(u, v)] for u, v in Xab.tolist()), dtype=np.int64, count=Xab.shape[0])


def _canonical(ds: Dataset, a: str, b: str) -> tuple[str, str]:
    return (a, b) if ds.index(a) < ds.index(b) else (b, a)


def h_statistic_detail(oracle, ds: Dataset, a: str, b: str, *,
                       marginals: dict[str, EffectProfile] | None = None,
                       row_cap: int | None = None, background_cap: int | None = None,
                       seed: int = 0) -> HValue:
    """Two-variable interaction strength, clipped to [0, 1], with a flag for 0/0."""
    if a == b:
        raise ValueError("H-statistic needs two distinct features")
    a, b = _canonical(ds, a, b)
    marginals = marginals or {}
    pa = marginals.get(a) or pd_univariate(oracle, ds, a, background_cap=background_cap, seed=seed)
    pb = marginals.get(b) or pd_univariate(oracle, ds, b, background_cap=background_cap, seed=seed)
    grid, pd2, _ = pd_joint(oracle, ds, a, b, background_cap=background_cap, seed=seed)
    rows = None
    if row_cap is not None and ds.n > row_cap:
        rows = np.sort(np.random.default_rng(seed).choice(ds.n, size=row_cap, replace=False))
    return _h_from_parts(ds, a, b, pa, pb, grid, pd2, rows)


def h_statistic(oracle, ds: Dataset, a: str, b: str, **kwargs) -> float:
    return h_statistic_detail(oracle, ds, a, b, **kwargs).h


def h_cutoff(h_values: Sequence[float]) -> float:
    """Smallest observed value at which the empirical CDF exceeds 50%.

    Pairs with H at or above the cutoff form the upper half of the values
    (ties kept).
    """
    v = np.sort(np.asarray(h_values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("h_cutoff needs at least one value")
    ecdf = np.searchsorted(v, v, side="right") / v.size
    return float(v[np.argmax(ecdf > 0.5)])


@dataclass
class HScreen:
    pairs: list[tuple[str, str]]
    h_values: list[float]
    degenerate: list[bool]
    cutoff: float | None
    row_cap: int | None = None

    @property
    def retained(self) -> list[tuple[str, str]]:
        if self.cutoff is None:
            return []
        return [p for p, h in zip(self.pairs, self.h_values) if h >= self.cutoff]

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "row_cap": self.row_cap,
            "pairs": [{"pair": list(p), "h": h, "degenerate": d, "retained": self.cutoff is not None and h >= self.cutoff}
                      for p, h, d in zip(self.pairs, self.h_values, self.degenerate)],
        }


def screen_pairs(oracle, ds: Dataset, features: Sequence[str], *, h: float | None = None,
                 marginals: dict[str, EffectProfile] | None = None,
                 row_cap: int | None = None, background_cap: int | None = None,
                 seed: int = 0, joint_cache: dict | None = None) -> HScreen:
    """H-statistics for every unordered pair of ``features``.

    The cutoff is ``h`` when given, otherwise the 50% ECDF rule.
    ``joint_cache`` (keyed by canonical pair) receives the two-way PDs so the
    caller can reuse them for pure interaction profiles.
    """
    feats = sorted(features, key=ds.index)
    marginals = dict(marginals or {})
    for f in feats:
        if f not in marginals:
            marginals[f] = pd_univariate(oracle, ds, f, background_cap=background_cap, seed=seed)
    rows = None
    if row_cap is not None and ds.n > row_cap:
        rows = np.sort(np.random.default_rng(seed).choice(ds.n, size=row_cap, replace=False))
    pairs, values, flags = [], [], []
    for x, a in enumerate(feats):
        for b in feats[x + 1:]:
            grid, pd2, weight = pd_joint(oracle, ds, a, b, background_cap=background_cap, seed=seed)
            if joint_cache is not None:
                joint_cache[(a, b)] = (grid, pd2, weight)
            hv = _h_from_parts(ds, a, b, marginals[a], marginals[b], grid, pd2, rows)
            pairs.append((a, b))
            values.append(hv.h)
            flags.append(hv.degenerate)
    cutoff = h if h is not None else (h_cutoff(values) if values else None)
    return HScreen(pairs, values, flags, cutoff, row_cap)


def pure_from_joint(ds: Dataset, a: str, b: str, joint, marginals: dict[str, EffectProfile]) -> EffectProfile:
    """Pure interaction profile from a cached two-way PD."""
    grid, pd2, weight = joint
    effect = pd2 - (marginals[a].lookup(grid[:, 0]) + marginals[b].lookup(grid[:, 1]))
    return EffectProfile((a, b), grid, effect, weight, "pd_interaction", (ds.spec(a), ds.spec(b)))
