"""Accuracy loss and fidelity of surrogates against the black box, plus the
linear-model and shallow-tree benchmark surrogates.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from .blackbox import GbmParams, _Binner, _Flat, _grow, _Node
from .data import Dataset
from .glm import GlmFit, build_design, design_matrix, fit_glm, glm_predict, poisson_deviance
from .segment import SegmentedData

# benchmark predictions can go nonpositive; the deviance needs mu > 0
RATE_FLOOR = 1e-10


def delta_deviance(surrogate_pred, blackbox_pred, y) -> float:
    """Percentage excess Poisson deviance of the surrogate over the black box."""
    d_bb = poisson_deviance(y, blackbox_pred)
    if d_bb == 0:
        raise ValueError("black-box deviance is zero; the relative loss is undefined")
    return 100.0 * (poisson_deviance(y, surrogate_pred) / d_bb - 1.0)


def fidelity_r2(surrogate_pred, blackbox_pred) -> float:
    s = np.asarray(surrogate_pred, dtype=np.float64)
    b = np.asarray(blackbox_pred, dtype=np.float64)
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("black-box predictions have zero variance")
    return 1.0 - float(np.sum((s - b) ** 2)) / ss_tot


def correlations(surrogate_pred, blackbox_pred) -> tuple[float, float, float]:
    """Pearson, Spearman (average ranks for ties) and their mean."""
    s = np.asarray(surrogate_pred, dtype=np.float64)
    b = np.asarray(blackbox_pred, dtype=np.float64)
    if np.ptp(s) == 0 or np.ptp(b) == 0:
        raise ValueError("correlations need non-constant vectors")
    pearson = float(np.clip(np.corrcoef(s, b)[0, 1], -1.0, 1.0))
    rs, rb = stats.rankdata(s), stats.rankdata(b)
    spearman = float(np.clip(np.corrcoef(rs, rb)[0, 1], -1.0, 1.0))
    return pearson, spearman, (pearson + spearman) / 2.0


# ------------------------------------------------------------------ benchmarks


def _raw_categorical(ds: Dataset) -> tuple[SegmentedData, dict[str, np.ndarray]]:
    cats = [f for f in ds.features if f.is_categorical]
    seg = SegmentedData([f.name for f in cats],
                        {f.name: ds.column(f.name).astype(np.int64) for f in cats},
                        {f.name: list(f.levels) for f in cats}, ds.n)
    numeric = {f.name: ds.column(f.name) for f in ds.features if not f.is_categorical}
    return seg, numeric


@dataclass
class LinearSurrogate:
    fit: GlmFit

    def predict(self, ds: Dataset) -> np.ndarray:
        seg, numeric = _raw_categorical(ds)
        return glm_predict(self.fit, design_matrix(self.fit.design, seg, numeric))


def benchmark_lm(ds: Dataset, blackbox_pred) -> tuple[np.ndarray, LinearSurrogate]:
    """Least squares on the raw features (categoricals dummy-coded) against black-box rates."""
    seg, numeric = _raw_categorical(ds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        info, X = build_design(seg, numeric=numeric)
        fit = fit_glm(info, X, np.asarray(blackbox_pred, dtype=np.float64), None, "normal_identity")
    model = LinearSurrogate(fit)
    return glm_predict(fit, X), model


@dataclass
class TreeSurrogate:
    root: _Node
    init: float
    max_depth: int

    def __post_init__(self):
        self._flat = _Flat([self.root])

    def predict(self, ds_or_X) -> np.ndarray:
        X = ds_or_X.X if isinstance(ds_or_X, Dataset) else ds_or_X
        return self.init + self._flat.predict(X)

    @property
    def depth(self) -> int:
        return self.root.depth()

    def n_leaves(self) -> int:
        def count(nd):
            return 1 if nd.is_leaf else count(nd.left) + count(nd.right)

        return count(self.root)


def benchmark_tree(ds: Dataset, blackbox_pred, max_depth: int = 4,
                   min_node_size: int = 7) -> tuple[np.ndarray, TreeSurrogate]:
    """Single squared-error regression tree on the raw features."""
    target = np.asarray(blackbox_pred, dtype=np.float64)
    init = float(target.mean())
    g = init - target
    h = np.ones(ds.n)
    params = GbmParams(T_max=1, learning_rate=1.0, bag_fraction=1.0, max_depth=max_depth,
                       min_node_size=min_node_size)
    root = _grow(np.arange(ds.n, dtype=np.int64), 0, _Binner(ds), g, h, params, list(range(ds.p)))
    model = TreeSurrogate(root, init, max_depth)
    return model.predict(ds), model


# ------------------------------------------------------------------ reports


@dataclass
class ModelMetrics:
    delta_deviance_pct: float
    r2: float
    pearson: float
    spearman: float
    rho_avg: float


@dataclass
class EvalReport:
    """Metrics per surrogate (``glm``, ``lm``, ``dt``) against the black box."""

    models: dict[str, ModelMetrics] = field(default_factory=dict)
    dataset: str = "data"
    n_eval: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "n_eval": self.n_eval, "notes": self.notes,
                "models": {k: asdict(v) for k, v in self.models.items()}}

    def write_table(self, path) -> None:
        """Long table: one row per (metric, model), one column per dataset."""
        metrics = ["delta_deviance_pct", "r2", "pearson", "spearman", "rho_avg"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "model", self.dataset])
            for m in metrics:
                for name, mm in self.models.items():
                    w.writerow([m, name, f"{getattr(mm, m):.6g}"])


def metrics_for(surrogate_rate, blackbox_rate, y, exposure) -> ModelMetrics:
    """Fidelity on rates; accuracy loss on exposure-scaled means against ``y``."""
    s = np.asarray(surrogate_rate, dtype=np.float64)
    b = np.asarray(blackbox_rate, dtype=np.float64)
    dd = delta_deviance(np.maximum(s, RATE_FLOOR) * exposure, b * exposure, y)
    r2 = fidelity_r2(s, b)
    try:
        pe, sp, avg = correlations(s, b)
    except ValueError:
        pe = sp = avg = float("nan")
    return ModelMetrics(dd, r2, pe, sp, avg)


def evaluate_surrogates(model, oracle, ds: Dataset, *, holdout: float = 0.0, seed: int = 0,
                        dataset_name: str = "data", tree_depth: int = 4) -> EvalReport:
    """Compare the distilled GLM with the LM and DT benchmarks.

    With ``holdout > 0`` the benchmarks are fitted on the remaining rows and
    every metric is computed on the held-out fraction.
    """
    bb_rate = np.asarray(oracle.predict_rate(ds.X), dtype=np.float64)
    rows = np.arange(ds.n)
    if holdout > 0:
        if not holdout < 1:
            raise ValueError("holdout must be in [0, 1)")
        perm = np.random.default_rng(seed).permutation(ds.n)
        n_test = max(1, int(round(holdout * ds.n)))
        test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    else:
        train = test = rows
    ds_train, ds_test = ds.subset(train), ds.subset(test)
    _, lm = benchmark_lm(ds_train, bb_rate[train])
    _, dt = benchmark_tree(ds_train, bb_rate[train], max_depth=tree_depth)
    preds = {
        "glm": model.predict_rate(ds_test),
        "lm": lm.predict(ds_test),
        "dt": dt.predict(ds_test),
    }
    report = EvalReport(dataset=dataset_name, n_eval=int(len(test)))
    report.notes.append("fidelity metrics compare per-unit-exposure rates; delta deviance uses t * rate against y")
    if (preds["lm"] <= 0).any():
        report.notes.append(f"lm predictions floored at {RATE_FLOOR} for the deviance")
    bb = bb_rate[test]
    for name, p in preds.items():
        report.models[name] = metrics_for(p, bb, ds_test.y, ds_test.exposure)
    return report
