"""Distillation pipeline: group marginal effects, screen and group interactions,
fit the categorical Poisson GLM, and tune both penalties by cross-validation.
"""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import __version__
from .data import Dataset, FeatureSpec, kfold_split
from .effects import (EffectProfile, HScreen, pd_interaction_pure, pd_univariate, pure_from_joint,
                      screen_pairs)
from .glm import GlmFit, build_design, design_matrix, fit_glm, glm_predict, poisson_deviance
from .segment import (Grouping, PenaltyConfig, SegmentedData, pick_k, segment_dataset, select_all_k,
                      select_k)

logger = logging.getLogger(__name__)


def log_grid(lo: float = 1e-10, hi: float = 1.0, count: int = 50) -> list[float]:
    if not (0 < lo <= hi) or count < 1:
        raise ValueError("need 0 < lo <= hi and count >= 1")
    if count == 1:
        return [float(lo)]
    return [float(v) for v in np.logspace(np.log10(lo), np.log10(hi), count)]


@dataclass
class MaidrrConfig:
    lambda_grid_marg: list[float] = field(default_factory=log_grid)
    lambda_grid_intr: list[float] = field(default_factory=log_grid)
    k_max: int = 15
    K: int = 5
    seed: int = 0
    h_rule: str | float = "ecdf50"
    interactions: bool = True
    cv_regroup: bool = False
    background_cap: int | None = None
    h_row_cap: int | None = None
    threads: int = 1

    def __post_init__(self):
        for name in ("lambda_grid_marg", "lambda_grid_intr"):
            grid = getattr(self, name)
            if not grid or any(not v > 0 for v in grid):
                raise ValueError(f"{name} must be non-empty with positive values")
            setattr(self, name, [float(v) for v in grid])
        if self.k_max < 2:
            raise ValueError("k_max must be at least 2")
        if self.h_rule != "ecdf50" and not isinstance(self.h_rule, (int, float)):
            raise ValueError("h_rule must be 'ecdf50' or an explicit cutoff")

    @property
    def explicit_h(self) -> float | None:
        return None if self.h_rule == "ecdf50" else float(self.h_rule)

    def to_dict(self) -> dict:
        return asdict(self)


def _is_adjacent(spec: FeatureSpec) -> bool:
    return spec.kind in ("continuous", "ordinal")


@dataclass(eq=False)
class SurrogateModel:
    features: tuple[FeatureSpec, ...]
    marginal_groupings: list[Grouping]
    interaction_groupings: list[Grouping]
    glm: GlmFit
    lambda_marg: float | None = None
    lambda_intr: float | None = None
    h: float | None = None
    cv_deviance: float | None = None
    config: dict = field(default_factory=dict)

    @property
    def F(self) -> list[str]:
        return [g.feature for g in self.marginal_groupings]

    @property
    def I(self) -> list[tuple[str, str]]:
        return [g.feature for g in self.interaction_groupings]

    @property
    def groupings(self) -> list[Grouping]:
        return self.marginal_groupings + self.interaction_groupings

    def segment(self, ds: Dataset, strict: bool = False) -> SegmentedData:
        return segment_dataset(ds, self.groupings, strict=strict)

    def design_for(self, ds: Dataset, strict: bool = False) -> np.ndarray:
        return design_matrix(self.glm.design, self.segment(ds, strict=strict))

    def predict(self, ds: Dataset, exposure=None) -> np.ndarray:
        """Expected claim counts (``exposure=None`` uses the dataset's exposure)."""
        t = ds.exposure if exposure is None else exposure
        return glm_predict(self.glm, self.design_for(ds), t)

    def predict_rate(self, ds: Dataset) -> np.ndarray:
        return glm_predict(self.glm, self.design_for(ds), np.ones(ds.n))

    def to_dict(self) -> dict:
        return {
            "tool": "pdsurrogate",
            "version": __version__,
            "schema": [f.to_dict() for f in self.features],
            "lambda_marg": self.lambda_marg,
            "lambda_intr": self.lambda_intr,
            "h": self.h,
            "cv_deviance": self.cv_deviance,
            "F": self.F,
            "I": [list(p) for p in self.I],
            "marginal_groupings": [g.to_dict() for g in self.marginal_groupings],
            "interaction_groupings": [g.to_dict() for g in self.interaction_groupings],
            "glm": self.glm.to_dict(),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        feats = tuple(FeatureSpec.from_dict(f) for f in d["schema"])
        by_name = {f.name: f for f in feats}
        marg = [Grouping.from_dict(g, (by_name[g["feature"]],)) for g in d["marginal_groupings"]]
        intr = [Grouping.from_dict(g, (by_name[g["feature"][0]], by_name[g["feature"][1]]))
                for g in d["interaction_groupings"]]
        return cls(feats, marg, intr, GlmFit.from_dict(d["glm"]), d.get("lambda_marg"), d.get("lambda_intr"),
                   d.get("h"), d.get("cv_deviance"), d.get("config", {}))

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------- building blocks


def marginal_profiles(oracle, ds: Dataset, *, background_cap=None, seed=0) -> dict[str, EffectProfile]:
    return {name: pd_univariate(oracle, ds, name, background_cap=background_cap, seed=seed) for name in ds.names}


def group_marginals(oracle, ds: Dataset, lambda_marg: float, k_max: int = 15, *,
                    profiles: dict[str, EffectProfile] | None = None,
                    background_cap=None, seed=0) -> tuple[list[Grouping], list[str]]:
    """Group every feature by its PD; keep features with more than one group."""
    profiles = profiles or marginal_profiles(oracle, ds, background_cap=background_cap, seed=seed)
    cfg = PenaltyConfig(lambda_marg, k_max)
    groupings = [select_k(profiles[name], cfg, _is_adjacent(ds.spec(name))) for name in ds.names]
    F = [g.feature for g in groupings if g.k > 1]
    return groupings, F


def group_interactions(oracle, ds: Dataset, F: Sequence[str], h: float | None, lambda_intr: float,
                       k_max: int = 15, *, marginals: dict[str, EffectProfile] | None = None,
                       background_cap=None, h_row_cap=None, seed=0):
    """Screen pairs of ``F`` by H-statistic and group the surviving pure interactions.

    ``h=None`` applies the 50% ECDF rule. Returns ``(groupings, I, screen)``.
    """
    marginals = dict(marginals or {})
    joint: dict = {}
    screen = screen_pairs(oracle, ds, F, h=h, marginals=marginals, row_cap=h_row_cap,
                          background_cap=background_cap, seed=seed, joint_cache=joint)
    for f in F:
        if f not in marginals:
            marginals[f] = pd_univariate(oracle, ds, f, background_cap=background_cap, seed=seed)
    cfg = PenaltyConfig(lambda_intr, k_max)
    groupings = []
    for a, b in screen.retained:
        prof = pure_from_joint(ds, a, b, joint[(a, b)], marginals)
        groupings.append(select_k(prof, cfg, adjacency=False))
    I = [g.feature for g in groupings if g.k > 1]
    return groupings, I, screen


def fit_surrogate(ds: Dataset, groupings: Sequence[Grouping], features=None, family: str = "poisson_log",
                  **meta) -> SurrogateModel:
    """Fit the Poisson GLM with log-exposure offset on the grouped features.

    Groupings with a single group are skipped. The response is the observed
    claim count, not the black-box prediction.
    """
    used = [g for g in groupings if g.k > 1]
    marg = [g for g in used if not g.is_pair]
    intr = [g for g in used if g.is_pair]
    if not marg:
        warnings.warn("no feature selected; fitting an intercept-only GLM", stacklevel=2)
    seg = segment_dataset(ds, marg + intr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        info, X = build_design(seg)
    offset = np.log(ds.exposure) if family == "poisson_log" else None
    fit = fit_glm(info, X, ds.y, offset, family)
    return SurrogateModel(ds.features if features is None else features, marg, intr, fit, **meta)


# ------------------------------------------------------------- cross-validation


def _cv_glm_deviance(ds: Dataset, groupings: Sequence[Grouping], folds) -> tuple[float, bool]:
    """Mean out-of-fold Poisson deviance of the GLM on fixed groupings."""
    used = [g for g in groupings if g.k > 1]
    seg = segment_dataset(ds, used)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        info, X = build_design(seg)
    offset = np.log(ds.exposure)
    devs = []
    ok = True
    for train, test in folds:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_glm(info, X[train], ds.y[train], offset[train], "poisson_log")
        ok &= fit.converged
        mu = glm_predict(fit, X[test], ds.exposure[test])
        devs.append(poisson_deviance(ds.y[test], np.maximum(mu, 1e-300)))
    return float(np.mean(devs)), ok


def _signature(groupings: Sequence[Grouping]) -> tuple:
    return tuple((g.name, g.k, g.assignment.tobytes()) for g in groupings if g.k > 1)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class TuneReport:
    stage1: list[dict] = field(default_factory=list)
    stage2: list[dict] = field(default_factory=list)
    screen: dict | None = None
    h: float | None = None
    F: list[str] = field(default_factory=list)
    I: list[list[str]] = field(default_factory=list)
    lambda_marg: float | None = None
    lambda_intr: float | None = None
    cv_marginal_only: float | None = None
    cv_final: float | None = None
    interactions_used: bool = False
    skipped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def autotune(oracle, ds: Dataset, cfg: MaidrrConfig | None = None,
             report: TuneReport | None = None) -> SurrogateModel:
    """Two-stage penalty tuning by K-fold cross-validated Poisson deviance.

    Stage 1 picks the marginal penalty; stage 2 freezes those groupings and
    picks the interaction penalty, falling back to the marginal-only model
    when no interaction model scores strictly better. Ties between penalties
    go to the larger (coarser) value.
    """
    cfg = cfg or MaidrrConfig()
    report = report if report is not None else TuneReport()
    folds = list(kfold_split(ds, cfg.K, cfg.seed))
    profiles = marginal_profiles(oracle, ds, background_cap=cfg.background_cap, seed=cfg.seed)
    candidates = {name: select_all_k(profiles[name], cfg.k_max, _is_adjacent(ds.spec(name)))
                  for name in ds.names}
    fold_cands = _fold_candidates(oracle, ds, folds, cfg) if cfg.cv_regroup else None

    # stage 1: marginal penalty
    def stage1(lam):
        groupings = [pick_k(candidates[name], lam) for name in ds.names]
        return groupings

    per_lam = _map(stage1, cfg.lambda_grid_marg, cfg.threads)
    cache: dict = {}

    def score(groupings, lam, fold_groupings=None):
        if fold_groupings is not None:
            return _cv_regrouped(ds, folds, fold_groupings)
        sig = _signature(groupings)
        if sig not in cache:
            cache[sig] = _cv_glm_deviance(ds, groupings, folds)
        return cache[sig]

    def fold_pick(lam):
        if fold_cands is None:
            return None
        return [[pick_k(fc[name], lam) for name in ds.names] for fc in fold_cands]

    scores = _map(lambda pair: score(pair[1], pair[0], fold_pick(pair[0])),
                  list(zip(cfg.lambda_grid_marg, per_lam)), cfg.threads)
    best = None
    for lam, groupings, (dev, ok) in zip(cfg.lambda_grid_marg, per_lam, scores):
        entry = {"lambda": lam, "cv_deviance": dev, "k": {g.feature: g.k for g in groupings}, "converged": ok}
        report.stage1.append(entry)
        if not ok:
            report.skipped.append({"stage": 1, "lambda": lam, "reason": "GLM did not converge"})
            continue
        if best is None or dev < best[0] or (dev == best[0] and lam > best[1]):
            best = (dev, lam, groupings)
    if best is None:
        raise RuntimeError("no marginal penalty produced a converged GLM")
    dev1, lam_m, marg_groupings = best
    F = [g.feature for g in marg_groupings if g.k > 1]
    report.lambda_marg, report.F, report.cv_marginal_only = lam_m, F, dev1
    meta = {"config": cfg.to_dict()}

    final_groupings = marg_groupings
    lam_i = None
    h = None
    dev_final = dev1
    if cfg.interactions and len(F) >= 2:
        joint: dict = {}
        screen = screen_pairs(oracle, ds, F, h=cfg.explicit_h, marginals=profiles, row_cap=cfg.h_row_cap,
                              background_cap=cfg.background_cap, seed=cfg.seed, joint_cache=joint)
        h = screen.cutoff
        report.screen = screen.to_dict()
        report.h = h
        pair_cands = {pair: select_all_k(pure_from_joint(ds, *pair, joint[pair], profiles), cfg.k_max, False)
                      for pair in screen.retained}
        fold_pair_cands = _fold_pair_candidates(oracle, ds, folds, cfg, screen.retained) if cfg.cv_regroup else None

        def stage2(lam):
            return [pick_k(pair_cands[p], lam) for p in screen.retained]

        per_lam2 = _map(stage2, cfg.lambda_grid_intr, cfg.threads)

        def fold_pick2(lam):
            if fold_pair_cands is None:
                return None
            marg_f = fold_pick(lam_m)
            return [mf + [pick_k(fpc[p], lam) for p in screen.retained] for mf, fpc in zip(marg_f, fold_pair_cands)]

        scores2 = _map(lambda pair: score(marg_groupings + pair[1], pair[0], fold_pick2(pair[0])),
                       list(zip(cfg.lambda_grid_intr, per_lam2)), cfg.threads)
        best2 = None
        for lam, ig, (dev, ok) in zip(cfg.lambda_grid_intr, per_lam2, scores2):
            report.stage2.append({"lambda": lam, "cv_deviance": dev, "converged": ok,
                                  "k": {":".join(g.feature): g.k for g in ig}})
            if not ok:
                report.skipped.append({"stage": 2, "lambda": lam, "reason": "GLM did not converge"})
                continue
            if best2 is None or dev < best2[0] or (dev == best2[0] and lam > best2[1]):
                best2 = (dev, lam, ig)
        if best2 is not None and best2[0] < dev1 and any(g.k > 1 for g in best2[2]):
            dev_final, lam_i, intr = best2
            final_groupings = marg_groupings + intr
            report.interactions_used = True
        elif best2 is not None:
            lam_i = best2[1]
    report.lambda_intr = lam_i
    model = fit_surrogate(ds, final_groupings, lambda_marg=lam_m, lambda_intr=lam_i, h=h,
                          cv_deviance=dev_final, **meta)
    report.I = [list(p) for p in model.I]
    report.cv_final = dev_final
    return model


# --------------------------------------------------------- stricter CV variant


def _fold_candidates(oracle, ds: Dataset, folds, cfg: MaidrrConfig):
    out = []
    for train, _ in folds:
        sub = ds.subset(train)
        prof = marginal_profiles(oracle, sub, background_cap=cfg.background_cap, seed=cfg.seed)
        out.append({name: select_all_k(prof[name], cfg.k_max, _is_adjacent(ds.spec(name))) for name in ds.names})
    return out


def _fold_pair_candidates(oracle, ds: Dataset, folds, cfg: MaidrrConfig, pairs):
    out = []
    for train, _ in folds:
        sub = ds.subset(train)
        prof = marginal_profiles(oracle, sub, background_cap=cfg.background_cap, seed=cfg.seed)
        cands = {}
        for a, b in pairs:
            p = pd_interaction_pure(oracle, sub, a, b, marginals=prof, background_cap=cfg.background_cap,
                                    seed=cfg.seed)
            cands[(a, b)] = select_all_k(p, cfg.k_max, False)
        out.append(cands)
    return out


def _cv_regrouped(ds: Dataset, folds, fold_groupings) -> tuple[float, bool]:
    """CV deviance when each fold's groupings come from its own training rows."""
    offset = np.log(ds.exposure)
    devs = []
    ok = True
    for (train, test), groupings in zip(folds, fold_groupings):
        used = [g for g in groupings if g.k > 1]
        seg = segment_dataset(ds, used, strict=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            info, X = build_design(seg.subset(train))
            fit = fit_glm(info, X, ds.y[train], offset[train], "poisson_log")
        ok &= fit.converged
        Xt = design_matrix(info, seg.subset(test))
        mu = glm_predict(fit, Xt, ds.exposure[test])
        devs.append(poisson_deviance(ds.y[test], np.maximum(mu, 1e-300)))
    return float(np.mean(devs)), ok
