"""Optimal weighted 1-D grouping of effect profiles.

Groupings minimize the weighted within-group sum of squares exactly by
dynamic programming. With adjacency, groups are contiguous runs in feature
order; without it, the effects are sorted first (optimal 1-D clusters under
squared error are contiguous in sorted order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset, FeatureSpec, format_number
from .effects import EffectProfile


class CoverageError(KeyError):
    """A value to segment is not covered by the grouping's grid."""


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float
    k_max: int = 15

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")


@dataclass(eq=False)
class Grouping:
    """Assignment of grid points to ``k`` groups.

    ``assignment`` holds 0-based group indices aligned with ``grid``. Group 0
    is the first group in feature order (adjacency) or the lowest-effect
    group (no adjacency).
    """

    feature: str | tuple[str, str] | None
    k: int
    assignment: np.ndarray
    group_effect: np.ndarray
    wmse: float
    adjacency: bool
    grid: np.ndarray | None = None
    weight: np.ndarray | None = None
    effect: np.ndarray | None = None
    specs: tuple[FeatureSpec, ...] = ()
    losses: dict = field(default_factory=dict)

    @property
    def is_pair(self) -> bool:
        return isinstance(self.feature, tuple)

    @property
    def name(self) -> str:
        return ":".join(self.feature) if self.is_pair else str(self.feature)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def labels(self) -> list[str]:
        """Stable human-readable label per group."""
        if self.is_pair or self.grid is None or not self.specs:
            return [f"grp{g + 1}" for g in range(self.k)]
        spec = self.specs[0]
        out = []
        for g in range(self.k):
            vals = self.grid[self.members(g)]
            if spec.kind == "continuous":
                lo, hi = format_number(vals.min()), format_number(vals.max())
                out.append(lo if lo == hi else f"[{lo}, {hi}]")
            else:
                out.append(" & ".join(spec.levels[int(v)] for v in vals))
        return out

    def member_values(self, g: int) -> list:
        """Group members as raw values/labels (pairs for interactions)."""
        def fmt(spec, v):
            return spec.levels[int(v)] if spec.is_categorical else float(v)

        idx = self.members(g)
        if self.is_pair:
            a, b = self.specs
            return [[fmt(a, u), fmt(b, v)] for u, v in self.grid[idx]]
        return [fmt(self.specs[0], v) for v in self.grid[idx]]

    def to_dict(self) -> dict:
        labels = self.labels()
        return {
            "feature": list(self.feature) if self.is_pair else self.feature,
            "k": self.k,
            "adjacency": self.adjacency,
            "wmse": self.wmse,
            "groups": [self._group_dict(g, labels[g]) for g in range(self.k)],
        }

    def _group_dict(self, g: int, label: str) -> dict:
        d = {"label": label, "members": self.member_values(g), "effect": float(self.group_effect[g])}
        if self.weight is not None:
            d["weights"] = [float(v) for v in self.weight[self.members(g)]]
        return d

    @classmethod
    def from_dict(cls, d: dict, specs: tuple[FeatureSpec, ...]) -> "Grouping":
        def enc(spec, v):
            return float(spec.levels.index(v)) if spec.is_categorical else float(v)

        feature = tuple(d["feature"]) if isinstance(d["feature"], list) else d["feature"]
        pts, assign, eff, wts = [], [], [], []
        for g, grp in enumerate(d["groups"]):
            wts.extend(grp.get("weights", [1.0] * len(grp["members"])))
            for mem in grp["members"]:
                if isinstance(feature, tuple):
                    pts.append((enc(specs[0], mem[0]), enc(specs[1], mem[1])))
                else:
                    pts.append(enc(specs[0], mem))
                assign.append(g)
            eff.append(grp["effect"])
        grid = np.asarray(pts, dtype=np.float64)
        assign = np.asarray(assign, dtype=np.int64)
        order = np.lexsort(grid.T[::-1]) if grid.ndim == 2 else np.argsort(grid, kind="stable")
        weight = np.asarray(wts, dtype=np.float64)[order]
        return cls(feature, int(d["k"]), assign[order], np.asarray(eff), float(d["wmse"]),
                   bool(d["adjacency"]), grid[order], weight=weight, specs=specs)


def _prepare(effect, weight, adjacency: bool, order):
    z = np.asarray(effect, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if z.ndim != 1 or z.shape != w.shape or z.size == 0:
        raise ValueError("effect and weight must be equal-length, non-empty vectors")
    if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if not np.all(np.isfinite(z)):
        raise ValueError("effects must be finite")
    if adjacency:
        if order is None:
            raise ValueError("adjacency mode needs an order")
        perm = np.argsort(np.asarray(order), kind="stable")
    else:
        perm = np.argsort(z, kind="stable")
    w = w / w.sum()
    zs = z[perm]
    ws = w[perm]
    zc = zs - np.dot(ws, zs)
    scale = float(np.dot(ws, zc * zc))
    return perm, zs, ws, zc, 1e-12 * scale


def _backtrack(start: np.ndarray, k: int, m: int) -> np.ndarray:
    lab = np.empty(m, dtype=np.int64)
    i = m - 1
    for c in range(k - 1, -1, -1):
        s = int(start[c, i])
        lab[s:i + 1] = c
        i = s - 1
    return lab


def _summarize(z: np.ndarray, w: np.ndarray, lab: np.ndarray, k: int):
    eff = np.empty(k)
    wmse = 0.0
    for g in range(k):
        sel = lab == g
        eff[g] = np.dot(w[sel], z[sel]) / w[sel].sum()
        wmse += float(np.dot(w[sel], (z[sel] - eff[g]) ** 2))
    return eff, wmse


def _solve_all(effect, weight, kmax: int, adjacency: bool, order):
    perm, zs, ws, zc, tol = _prepare(effect, weight, adjacency, order)
    m = zs.size
    kmax = min(kmax, m)
    _, start = kernels.dp_cluster(np.ascontiguousarray(zc), np.ascontiguousarray(ws), kmax, tol)
    w_orig = np.empty_like(ws)
    w_orig[perm] = ws
    z_orig = np.asarray(effect, dtype=np.float64)
    out = []
    for k in range(1, kmax + 1):
        lab_sorted = _backtrack(start, k, m)
        assignment = np.empty(m, dtype=np.int64)
        assignment[perm] = lab_sorted
        eff, wmse = _summarize(z_orig, w_orig, assignment, k)
        out.append((assignment, eff, wmse))
    return out


def cluster_1d(effect: Sequence[float], weight: Sequence[float], k: int, adjacency: bool = False,
               order: Sequence | None = None) -> Grouping:
    """Exact weighted 1-D clustering of ``effect`` into exactly ``k`` groups.

    Parameters
    ----------
    effect, weight
        Values to group and their positive weights (normalized internally).
    k
        Number of non-empty groups, ``1 <= k <= len(effect)``.
    adjacency
        Restrict groups to contiguous runs of ``order``.
    order
        Sort keys giving the total order used under adjacency.
    """
    m = len(effect)
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    assignment, eff, wmse = _solve_all(effect, weight, k, adjacency, order)[k - 1]
    return Grouping(None, k, assignment, eff, wmse, adjacency,
                    effect=np.asarray(effect, dtype=np.float64), weight=np.asarray(weight, dtype=np.float64))


def penalized_loss(grouping: Grouping, lam: float) -> float:
    """Weighted MSE plus ``lam`` times the common logarithm of the group count."""
    return grouping.wmse + lam * math.log10(grouping.k)


def select_k(profile: EffectProfile, cfg: PenaltyConfig, adjacency: bool) -> Grouping:
    """Group count minimizing the penalized loss over ``1..min(k_max, m)``.

    Ties go to the smaller group count.
    """
    order = np.arange(profile.m) if adjacency else None
    sols = _solve_all(profile.effect, profile.weight, cfg.k_max, adjacency, order)
    losses = {}
    best = None
    for k, (assignment, eff, wmse) in enumerate(sols, start=1):
        loss = wmse + cfg.lam * math.log10(k)
        losses[k] = loss
        if best is None or loss < best[0]:
            best = (loss, k, assignment, eff, wmse)
    _, k, assignment, eff, wmse = best
    return Grouping(profile.feature, k, assignment, eff, wmse, adjacency, profile.grid,
                    profile.weight, profile.effect, profile.specs, losses)


def select_all_k(profile: EffectProfile, k_max: int, adjacency: bool) -> list[Grouping]:
    """Optimal groupings for every k in ``1..min(k_max, m)`` (one DP pass)."""
    order = np.arange(profile.m) if adjacency else None
    sols = _solve_all(profile.effect, profile.weight, k_max, adjacency, order)
    return [Grouping(profile.feature, k, a, e, w, adjacency, profile.grid, profile.weight,
                     profile.effect, profile.specs) for k, (a, e, w) in enumerate(sols, start=1)]


def pick_k(candidates: list[Grouping], lam: float) -> Grouping:
    """Penalized-loss argmin over precomputed groupings (ties to smaller k)."""
    best = None
    for g in candidates:
        loss = penalized_loss(g, lam)
        if best is None or loss < best[0]:
            best = (loss, g)
    return best[1]


@dataclass(eq=False)
class SegmentedData:
    """Categorical view of a dataset: one group-code column per term.

    Codes are 0-based group indices; -1 marks an interaction pair that was
    never observed when the grouping was built.
    """

    terms: list[str]
    codes: dict[str, np.ndarray]
    labels: dict[str, list[str]]
    n: int

    def subset(self, rows) -> "SegmentedData":
        return SegmentedData(self.terms, {t: c[rows] for t, c in self.codes.items()}, self.labels,
                             len(np.arange(self.n)[rows]))


def map_values(grouping: Grouping, ds: Dataset, strict: bool = True) -> np.ndarray:
    """Group index for every row of ``ds`` under ``grouping``."""
    if grouping.is_pair:
        a, b = grouping.feature
        Xab = ds.X[:, [ds.index(a), ds.index(b)]]
        keys = {(float(u), float(v)): int(g) for (u, v), g in zip(grouping.grid, grouping.assignment)}
        return np.fromiter((keys.get((u, v), -1) for u, v in Xab.tolist()), dtype=np.int64, count=ds.n)
    j = ds.index(grouping.feature)
    x = ds.X[:, j]
    idx = np.clip(np.searchsorted(grouping.grid, x), 0, len(grouping.grid) - 1)
    hit = grouping.grid[idx] == x
    codes = grouping.assignment[idx].copy()
    if not hit.all():
        spec = ds.features[j]
        if strict:
            bad = ds.format_value(j, x[~hit][0])
            raise CoverageError(f"value {bad} of {grouping.feature!r} is not covered by the grouping")
        miss = np.flatnonzero(~hit)
        if spec.kind != "continuous":
            # unknown levels fall back to the reference level downstream
            codes[miss] = -1
            return codes
        # continuous values off the grid go to the nearest grid point
        right = np.clip(np.searchsorted(grouping.grid, x[miss]), 0, len(grouping.grid) - 1)
        left = np.clip(right - 1, 0, len(grouping.grid) - 1)
        near = np.where(np.abs(grouping.grid[left] - x[miss]) <= np.abs(grouping.grid[right] - x[miss]),
                        left, right)
        codes[miss] = grouping.assignment[near]
    return codes


def segment_dataset(ds: Dataset, groupings: Sequence[Grouping], strict: bool = True) -> SegmentedData:
    """Replace grouped features and pairs by their group codes."""
    terms, codes, labels = [], {}, {}
    for g in groupings:
        terms.append(g.name)
        codes[g.name] = map_values(g, ds, strict=strict)
        labels[g.name] = g.labels()
    return SegmentedData(terms, codes, labels, ds.n)
