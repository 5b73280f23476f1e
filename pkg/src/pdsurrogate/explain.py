"""Global and local interpretation of a fitted surrogate.

All three views are read directly from the GLM coefficients:

* :func:`decision_table` enumerates every combination of marginal groups
  and predicts a rate for each;
* :func:`global_effects` lists every level's coefficient and its
  multiplicative factor with a Wald interval;
* :func:`local_explain` splits one prediction into a baseline and one
  factor per term.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Mapping

import numpy as np

from .data import Dataset
from .glm import ConvergenceError, confidence_intervals, design_matrix, glm_predict
from .segment import Grouping, SegmentedData, map_values

DEFAULT_TABLE_CAP = 1_000_000


class TableTooLarge(ValueError):
    """The decision table would exceed the configured row cap."""

    def __init__(self, rows: int, cap: int, sizes: dict):
        self.rows, self.cap, self.sizes = rows, cap, sizes
        detail = " x ".join(f"{k}={v}" for k, v in sizes.items())
        super().__init__(f"decision table needs {rows} rows ({detail}), above the cap of {cap}")


# ------------------------------------------------------------ decision table


@dataclass
class DecisionTable:
    features: list[str]
    labels: list[tuple[str, ...]]
    codes: np.ndarray
    rate: np.ndarray
    family: str = "poisson_log"

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def rate_pct(self) -> np.ndarray:
        return np.round(self.rate * 100.0, 2)

    def rows(self) -> list[dict]:
        pct = self.rate_pct
        return [{**dict(zip(self.features, lab)), "rate": float(r), "rate_pct": float(p)}
                for lab, r, p in zip(self.labels, self.rate, pct)]

    def to_dict(self) -> dict:
        return {"features": self.features, "family": self.family, "n_rows": len(self), "rows": self.rows()}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.features, "rate", "rate_pct"])
            for lab, r, p in zip(self.labels, self.rate, self.rate_pct):
                w.writerow([*lab, repr(float(r)), f"{p:.2f}"])

    def write_json(self, path, extra: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**(extra or {}), **self.to_dict()}, fh, indent=2)
            fh.write("\n")


def _marginal_code(grouping: Grouping, values: np.ndarray) -> np.ndarray:
    grid = grouping.grid
    idx = np.clip(np.searchsorted(grid, values), 0, len(grid) - 1)
    out = grouping.assignment[idx].copy()
    out[grid[idx] != values] = -1
    return out


def interaction_cell_map(pair: Grouping, marg_a: Grouping, marg_b: Grouping) -> dict[tuple[int, int], int]:
    """Interaction group per observed combination of marginal groups.

    A cell of marginal groups can contain pair values from several
    interaction groups; the cell takes the group carrying the most weight
    (ties to the lower group index). Cells never observed are absent.
    """
    ga = _marginal_code(marg_a, pair.grid[:, 0])
    gb = _marginal_code(marg_b, pair.grid[:, 1])
    w = pair.weight if pair.weight is not None else np.ones(len(pair.grid))
    tally: dict[tuple[int, int], np.ndarray] = {}
    for a, b, g, wt in zip(ga.tolist(), gb.tolist(), pair.assignment.tolist(), w.tolist()):
        if a < 0 or b < 0:
            continue
        tally.setdefault((a, b), np.zeros(pair.k))[g] += wt
    return {cell: int(np.argmax(v)) for cell, v in tally.items()}


def decision_table(model, cap: int = DEFAULT_TABLE_CAP) -> DecisionTable:
    """Prediction per unit exposure for every combination of marginal groups.

    Rows follow the model's term order with groups in label order (the last
    feature varies fastest).
    """
    marg = list(model.marginal_groupings)
    sizes = {g.name: g.k for g in marg}
    n_rows = math.prod(sizes.values()) if sizes else 1
    if n_rows > cap:
        raise TableTooLarge(n_rows, cap, sizes)
    codes = np.array(list(itertools.product(*[range(g.k) for g in marg])), dtype=np.int64).reshape(n_rows, len(marg))
    seg_codes = {g.name: codes[:, i] for i, g in enumerate(marg)}
    labels_per = {g.name: g.labels() for g in marg}
    by_name = {g.feature: (i, g) for i, g in enumerate(marg)}
    for pair in model.interaction_groupings:
        a, b = pair.feature
        (ia, ga), (ib, gb) = by_name[a], by_name[b]
        cells = interaction_cell_map(pair, ga, gb)
        seg_codes[pair.name] = np.fromiter((cells.get((u, v), -1) for u, v in zip(codes[:, ia], codes[:, ib])),
                                           dtype=np.int64, count=n_rows)
        labels_per[pair.name] = pair.labels()
    seg = SegmentedData(list(seg_codes), seg_codes, labels_per, n_rows)
    rate = glm_predict(model.glm, design_matrix(model.glm.design, seg), np.ones(n_rows))
    labels = [tuple(labels_per[g.name][c] for g, c in zip(marg, row)) for row in codes.tolist()]
    return DecisionTable([g.name for g in marg], labels, codes, rate, model.glm.family)


# ------------------------------------------------------------ global effects


@dataclass
class LevelEffect:
    term: str
    level: str
    reference: bool
    beta: float
    se: float | None
    factor: float | None
    ci_low: float | None
    ci_high: float | None


def global_effects(model, level: float = 0.95) -> list[LevelEffect]:
    """Coefficient and response-scale factor per level of every term.

    Reference levels carry beta 0 and factor 1 without an interval. For the
    identity link ``factor`` is None and the interval is on ``beta``.
    """
    fit = model.glm
    ivs = {iv.name: iv for iv in confidence_intervals(fit, level)}
    log_link = fit.family == "poisson_log"
    out = []
    for term in fit.design.terms:
        for g, lab in enumerate(term.labels):
            if g == term.reference:
                out.append(LevelEffect(term.name, lab, True, 0.0, None, 1.0 if log_link else None, None, None))
                continue
            iv = ivs[f"{term.name}={lab}"]
            if log_link:
                out.append(LevelEffect(term.name, lab, False, iv.beta, iv.se, iv.factor, iv.factor_low,
                                       iv.factor_high))
            else:
                out.append(LevelEffect(term.name, lab, False, iv.beta, iv.se, None, iv.low, iv.high))
    return out


# ------------------------------------------------------------ local explanations


@dataclass
class Contribution:
    term: str
    kind: str  # "marginal", "interaction" or "not selected"
    group: str | None
    beta: float
    factor: float
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass
class LocalExplanation:
    """Decomposition of one prediction.

    Under the log link ``prediction = baseline * prod(factor) * exposure``;
    under the identity link factors are additive contributions and
    ``prediction = baseline + sum(factor)``.
    """

    instance: dict[str, str]
    exposure: float
    baseline: float
    contributions: list[Contribution] = field(default_factory=list)
    prediction: float = float("nan")
    family: str = "poisson_log"

    def reconstruct(self) -> float:
        if self.family == "poisson_log":
            return self.baseline * math.prod(c.factor for c in self.contributions) * self.exposure
        return self.baseline + sum(c.factor for c in self.contributions)

    def to_dict(self) -> dict:
        return asdict(self)

    def bar_rows(self) -> list[dict]:
        """Bar-chart data: one row per term plus the baseline."""
        rows = [{"label": "(baseline)", "factor": self.baseline, "ci_low": None, "ci_high": None}]
        for c in self.contributions:
            label = c.term if c.group is None else f"{c.term}={c.group}"
            rows.append({"label": label, "factor": c.factor, "ci_low": c.ci_low, "ci_high": c.ci_high})
        return rows

    def write_bar_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "factor", "ci_low", "ci_high"])
            for r in self.bar_rows():
                w.writerow([r["label"], repr(float(r["factor"])),
                            "" if r["ci_low"] is None else repr(float(r["ci_low"])),
                            "" if r["ci_high"] is None else repr(float(r["ci_high"]))])


def instance_dataset(model, values: Mapping[str, object], exposure: float = 1.0) -> Dataset:
    """One-row dataset from raw values (labels for categoricals)."""
    x = []
    for spec in model.features:
        if spec.name not in values:
            raise KeyError(f"instance lacks feature {spec.name!r}")
        raw = values[spec.name]
        if spec.is_categorical:
            if str(raw) not in spec.levels:
                raise ValueError(f"feature {spec.name!r}: unknown level {raw!r}")
            x.append(float(spec.levels.index(str(raw))))
        else:
            x.append(float(raw))
    return Dataset(tuple(model.features), np.array([x]), np.zeros(1), np.array([float(exposure)]))


def local_explain(model, ds: Dataset, row: int = 0, exposure: float | None = None,
                  level: float = 0.95) -> LocalExplanation:
    """Baseline and per-term factors for row ``row`` of ``ds``.

    Features outside the model get factor 1 and kind ``"not selected"``;
    an interaction pair never seen in training also contributes factor 1.
    """
    fit = model.glm
    log_link = fit.family == "poisson_log"
    one = ds.subset([row])
    t = float(one.exposure[0] if exposure is None else exposure)
    try:
        ivs = {iv.name: iv for iv in confidence_intervals(fit, level)}
    except ConvergenceError:
        ivs = {}
    colix = fit.design.column_index()
    baseline = math.exp(fit.beta[0]) if log_link else float(fit.beta[0])
    instance = {spec.name: one.format_value(j, one.X[0, j]) for j, spec in enumerate(one.features)}
    neutral = 1.0 if log_link else 0.0
    contributions = []
    in_design = {t_.name: t_ for t_ in fit.design.terms}
    used = set()
    for g in model.groupings:
        kind = "interaction" if g.is_pair else "marginal"
        term = in_design.get(g.name)
        used.update(g.feature if g.is_pair else (g.feature,))
        if term is None:
            contributions.append(Contribution(g.name, "not selected", None, 0.0, neutral))
            continue
        code = int(map_values(g, one, strict=False)[0])
        if code < 0:
            contributions.append(Contribution(g.name, kind, None, 0.0, neutral))
            continue
        label = term.labels[code]
        if code == term.reference:
            contributions.append(Contribution(g.name, kind, label, 0.0, neutral))
            continue
        beta = float(fit.beta[colix[(g.name, code)]])
        iv = ivs.get(f"{g.name}={label}")
        if log_link:
            lo, hi = (iv.factor_low, iv.factor_high) if iv else (None, None)
            contributions.append(Contribution(g.name, kind, label, beta, math.exp(beta), lo, hi))
        else:
            lo, hi = (iv.low, iv.high) if iv else (None, None)
            contributions.append(Contribution(g.name, kind, label, beta, beta, lo, hi))
    for spec in model.features:
        if spec.name not in used:
            contributions.append(Contribution(spec.name, "not selected", None, 0.0, neutral))
    pred = float(glm_predict(fit, model.design_for(one), np.array([t]))[0])
    return LocalExplanation(instance, t, baseline, contributions, pred, fit.family)
