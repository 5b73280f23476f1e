"""Prediction oracles: the interface, a Poisson GBM and a lookup-table adapter.

An oracle maps encoded feature rows (the ``Dataset.X`` layout) to expected
claims per unit exposure.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernels
from .data import Dataset, FeatureSpec, kfold_split
from .glm import poisson_deviance

logger = logging.getLogger(__name__)

MAX_BINS = 255


class OracleError(RuntimeError):
    """The oracle cannot answer a query."""


class DegenerateTargetError(ValueError):
    pass


class PredictionOracle(ABC):
    """Black box exposing batch rate predictions."""

    @abstractmethod
    def predict_rate(self, X: np.ndarray) -> np.ndarray:
        """Expected claims per unit exposure for every row of ``X``."""

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.predict_rate(X)


class FunctionOracle(PredictionOracle):
    """Wrap a plain vectorized function ``f(X) -> rates``."""

    def __init__(self, fn):
        self.fn = fn

    def predict_rate(self, X):
        return np.asarray(self.fn(np.asarray(X, dtype=np.float64)), dtype=np.float64)


# ---------------------------------------------------------------- trees


@dataclass
class GbmParams:
    T_max: int = 1000
    learning_rate: float = 0.01
    bag_fraction: float = 0.75
    seed: int = 0
    max_depth: int = 2
    min_node_size: int = 20
    min_gain: float = 0.0
    reg_lambda: float = 0.0

    def __post_init__(self):
        if self.T_max < 1:
            raise ValueError("T_max must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.bag_fraction <= 1:
            raise ValueError("bag_fraction must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


class _Binner:
    """Maps each feature to at most ``MAX_BINS`` ordered bins.

    Continuous bins are identified by their upper edge, so "bin <= b" is the
    same as "x <= edge[b]" on training data.
    """

    def __init__(self, ds: Dataset, max_bins: int = MAX_BINS):
        self.edges = []
        self.kinds = [f.kind for f in ds.features]
        self.nlevels = []
        cols = []
        for j, spec in enumerate(ds.features):
            x = ds.X[:, j]
            if spec.kind == "continuous":
                u = np.unique(x)
                if len(u) > max_bins:
                    u = np.unique(np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:], method="higher"))
                self.edges.append(u)
                self.nlevels.append(len(u))
                cols.append(np.clip(np.searchsorted(u, x, side="left"), 0, len(u) - 1))
            else:
                self.edges.append(None)
                self.nlevels.append(len(spec.levels))
                cols.append(x.astype(np.int64))
        self.nbins = max(self.nlevels) if self.nlevels else 1
        self.bins = np.ascontiguousarray(np.column_stack(cols).astype(np.int32)) if cols else np.zeros((ds.n, 0), np.int32)


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left_levels: tuple[int, ...] | None = None
    default_left: bool = True
    n_levels: int = 0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.value}
        d = {"feature": self.feature, "default_left": self.default_left}
        if self.left_levels is None:
            d["threshold"] = self.threshold
        else:
            d["left_levels"] = list(self.left_levels)
            d["n_levels"] = self.n_levels
        d["left"] = self.left.to_dict()
        d["right"] = self.right.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "_Node":
        if "leaf" in d:
            return cls(value=float(d["leaf"]))
        node = cls(feature=int(d["feature"]), default_left=bool(d["default_left"]),
                   left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))
        if "threshold" in d:
            node.threshold = float(d["threshold"])
        else:
            node.left_levels = tuple(int(v) for v in d["left_levels"])
            node.n_levels = int(d["n_levels"])
        return node


def _best_split(G, H, C, binner: _Binner, features, min_node: int, min_gain: float, reg: float):
    """Best second-order split over the histogram of one node, or None."""
    Gt = G[0].sum()
    Ht = H[0].sum()
    parent = Gt * Gt / (Ht + reg)
    # splitting a node with constant gradient ratio gains nothing; ignore rounding noise
    floor = min_gain + 1e-10 * abs(parent)
    best = None
    for f in features:
        nb = binner.nlevels[f]
        g, h, c = G[f, :nb], H[f, :nb], C[f, :nb]
        if binner.kinds[f] == "nominal":
            present = np.flatnonzero(c > 0)
            ratio = g[present] / (h[present] + reg + 1e-300)
            order = present[np.argsort(ratio, kind="stable")]
        else:
            order = np.flatnonzero(c > 0)
        if order.size < 2:
            continue
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        cl = np.cumsum(c[order])[:-1]
        gr, hr, cr = Gt - gl, Ht - hl, c[order].sum() - cl
        ok = (cl >= min_node) & (cr >= min_node) & (hl > 0) & (hr > 0)
        if not ok.any():
            continue
        gain = np.where(ok, gl * gl / (hl + reg) + gr * gr / (hr + reg) - parent, -np.inf)
        s = int(np.argmax(gain))
        if gain[s] > floor and (best is None or gain[s] > best[0]):
            best = (float(gain[s]), f, order, s, cl[s], cr[s])
    return best


def _grow(rows, depth, binner, g, h, params: GbmParams, features) -> _Node:
    G, H, C = kernels.build_histograms(binner.bins, rows, g, h, binner.nbins)
    Gt, Ht = G[0].sum(), H[0].sum()
    leaf = _Node(value=float(-Gt / (Ht + params.reg_lambda)) if Ht + params.reg_lambda > 0 else 0.0)
    if depth >= params.max_depth or rows.size < 2 * params.min_node_size:
        return leaf
    best = _best_split(G, H, C, binner, features, params.min_node_size, params.min_gain, params.reg_lambda)
    if best is None:
        return leaf
    _, f, order, s, n_left, n_right = best
    left_bins = order[:s + 1]
    node = _Node(feature=f, default_left=bool(n_left >= n_right))
    fb = binner.bins[rows, f]
    if binner.kinds[f] == "nominal":
        mask = np.zeros(binner.nlevels[f], dtype=bool)
        mask[left_bins] = True
        absent = np.ones(binner.nlevels[f], dtype=bool)
        absent[order] = False
        # levels without rows in this node follow the larger child
        mask[absent] = node.default_left
        node.left_levels = tuple(int(v) for v in np.flatnonzero(mask))
        node.n_levels = binner.nlevels[f]
        go_left = mask[fb]
    else:
        b = int(left_bins[-1])
        node.threshold = float(binner.edges[f][b]) if binner.kinds[f] == "continuous" else float(b)
        go_left = fb <= b
    node.left = _grow(rows[go_left], depth + 1, binner, g, h, params, features)
    node.right = _grow(rows[~go_left], depth + 1, binner, g, h, params, features)
    return node


class _Flat:
    """Array form of a list of trees for the prediction kernel."""

    def __init__(self, trees: list[_Node]):
        feat, thr, is_cat, left, right, value, dleft, moff, mlen = [], [], [], [], [], [], [], [], []
        masks: list[int] = []
        roots = []

        def add(node: _Node) -> int:
            i = len(feat)
            feat.append(node.feature)
            thr.append(node.threshold)
            is_cat.append(0 if node.left_levels is None else 1)
            left.append(-1)
            right.append(-1)
            value.append(node.value)
            dleft.append(1 if node.default_left else 0)
            moff.append(len(masks))
            if node.left_levels is not None:
                m = [0] * node.n_levels
                for v in node.left_levels:
                    m[v] = 1
                masks.extend(m)
                mlen.append(node.n_levels)
            else:
                mlen.append(0)
            if not node.is_leaf:
                left[i] = add(node.left)
                right[i] = add(node.right)
            return i

        for t in trees:
            roots.append(add(t))
        self.arrays = (
            np.asarray(feat, dtype=np.int32), np.asarray(thr, dtype=np.float64),
            np.asarray(is_cat, dtype=np.uint8), np.asarray(left, dtype=np.int32),
            np.asarray(right, dtype=np.int32), np.asarray(value, dtype=np.float64),
            np.asarray(dleft, dtype=np.uint8), np.asarray(moff, dtype=np.int32),
            np.asarray(mlen, dtype=np.int32), np.asarray(masks if masks else [0], dtype=np.uint8),
            np.asarray(roots, dtype=np.int32),
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.zeros(0)
        return kernels.predict_ensemble(X, *self.arrays)


class GbmModel(PredictionOracle):
    """Boosted depth-limited trees on the log scale: ``exp(init + lr * sum(trees))``."""

    def __init__(self, trees: list[_Node], init_log_rate: float, learning_rate: float,
                 features: tuple[FeatureSpec, ...], params: GbmParams | None = None):
        self.trees = list(trees)
        self.init_log_rate = float(init_log_rate)
        self.learning_rate = float(learning_rate)
        self.features = tuple(features)
        self.params = params
        self._flat = _Flat(self.trees)

    @property
    def T(self) -> int:
        return len(self.trees)

    def truncated(self, T: int) -> "GbmModel":
        return GbmModel(self.trees[:T], self.init_log_rate, self.learning_rate, self.features, self.params)

    def with_tree(self, tree: _Node) -> "GbmModel":
        return GbmModel(self.trees + [tree], self.init_log_rate, self.learning_rate, self.features, self.params)

    def predict_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise ValueError(f"expected rows with {len(self.features)} features")
        return self.init_log_rate + self.learning_rate * self._flat.predict(X)

    def predict_rate(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.predict_score(X))

    def to_dict(self) -> dict:
        return {
            "type": "gbm",
            "init_log_rate": self.init_log_rate,
            "learning_rate": self.learning_rate,
            "T": self.T,
            "features": [f.to_dict() for f in self.features],
            "params": asdict(self.params) if self.params else None,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        params = GbmParams(**d["params"]) if d.get("params") else None
        return cls([_Node.from_dict(t) for t in d["trees"]], d["init_log_rate"], d["learning_rate"],
                   tuple(FeatureSpec.from_dict(f) for f in d["features"]), params)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GbmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def gbm_predict(model: GbmModel, X: np.ndarray) -> np.ndarray:
    return model.predict_rate(X)


def _boost(ds: Dataset, params: GbmParams, eval_set: Dataset | None = None):
    """Fit the boosted trees; optionally track held-out deviance after each tree."""
    sy, st = ds.y.sum(), ds.exposure.sum()
    if sy <= 0:
        raise DegenerateTargetError("all targets are zero; the Poisson GBM is undefined")
    init = math.log(sy / st)
    binner = _Binner(ds)
    rng = np.random.default_rng(params.seed)
    log_t = np.log(ds.exposure)
    score = np.full(ds.n, init)
    y = ds.y
    n_bag = max(1, int(round(params.bag_fraction * ds.n)))
    features = list(range(ds.p))
    trees = []
    curve = None
    if eval_set is not None:
        eval_score = np.full(eval_set.n, init)
        eval_log_t = np.log(eval_set.exposure)
        curve = np.empty(params.T_max)
    for t in range(params.T_max):
        mu = np.exp(score + log_t)
        g = mu - y
        h = mu
        if n_bag < ds.n:
            rows = np.sort(rng.choice(ds.n, size=n_bag, replace=False)).astype(np.int64)
        else:
            rows = np.arange(ds.n, dtype=np.int64)
        tree = _grow(rows, 0, binner, g, h, params, features)
        trees.append(tree)
        step = _Flat([tree])
        score += params.learning_rate * step.predict(ds.X)
        if eval_set is not None:
            eval_score += params.learning_rate * step.predict(eval_set.X)
            curve[t] = poisson_deviance(eval_set.y, np.exp(eval_score + eval_log_t))
    model = GbmModel(trees, init, params.learning_rate, ds.features, params)
    return model, curve


def train_gbm(ds: Dataset, params: GbmParams) -> GbmModel:
    """Stochastic gradient boosting of depth-limited trees on the Poisson deviance.

    Uses ``ln(exposure)`` as offset; each tree is fitted by Newton steps on a
    ``bag_fraction`` subsample drawn from ``params.seed``.
    """
    return _boost(ds, params)[0]


def cv_deviance_curve(ds: Dataset, params: GbmParams, K: int = 5) -> np.ndarray:
    """Mean out-of-fold Poisson deviance after each tree, length ``T_max``."""
    folds = kfold_split(ds, K, params.seed)
    curves = []
    for train, test in folds:
        _, curve = _boost(ds.subset(train), params, ds.subset(test))
        curves.append(curve)
    return np.mean(curves, axis=0)


def cv_select_trees(ds: Dataset, params: GbmParams, K: int = 5) -> int:
    """Tree count in ``1..T_max`` with the lowest mean out-of-fold deviance."""
    if K < 2:
        raise ValueError("K must be at least 2")
    curve = cv_deviance_curve(ds, params, K)
    return int(np.argmin(curve)) + 1


# ---------------------------------------------------------------- tables


class TableOracle(PredictionOracle):
    """Answers stored predictions for stored rows, keyed by the full encoded row.

    Counterfactual rows needed for partial dependence come from optional grid
    tables. Identical rows must carry identical rates.
    """

    def __init__(self, p: int):
        self.p = p
        self._table: dict[bytes, float] = {}

    def _add(self, X: np.ndarray, rates: np.ndarray, source: str) -> None:
        X = np.ascontiguousarray(X, dtype=np.float64)
        rates = np.asarray(rates, dtype=np.float64)
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            raise OracleError(f"{source}: rates must be finite and nonnegative")
        for row, r in zip(X, rates):
            key = row.tobytes()
            old = self._table.setdefault(key, float(r))
            if old != r:
                raise OracleError(f"{source}: conflicting rates for one feature row")

    def predict_rate(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValueError(f"expected rows with {self.p} features")
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            try:
                out[i] = self._table[row.tobytes()]
            except KeyError:
                raise OracleError(f"no stored prediction for row {row.tolist()}") from None
        return out

    def __len__(self) -> int:
        return len(self._table)


def table_oracle(rates, ds: Dataset, grids: dict | None = None) -> TableOracle:
    """Oracle from row-aligned rates plus optional counterfactual grids.

    ``grids`` maps a feature name to ``(row_index, value, rate)`` arrays, or a
    pair ``(a, b)`` to ``(row_index, value_a, value_b, rate)`` arrays, with
    values already encoded.
    """
    rates = np.asarray(rates, dtype=np.float64).ravel()
    if rates.shape[0] != ds.n:
        raise OracleError(f"{rates.shape[0]} stored rates for {ds.n} dataset rows")
    orc = TableOracle(ds.p)
    orc._add(ds.X, rates, "predictions")
    for key, arrs in (grids or {}).items():
        if isinstance(key, tuple):
            rows, va, vb, r = arrs
            X = ds.X[np.asarray(rows, dtype=np.int64)].copy()
            X[:, ds.index(key[0])] = va
            X[:, ds.index(key[1])] = vb
        else:
            rows, v, r = arrs
            X = ds.X[np.asarray(rows, dtype=np.int64)].copy()
            X[:, ds.index(key)] = v
        orc._add(X, r, f"grid {key}")
    return orc


def _read_rate_column(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "rate" not in reader.fieldnames:
            raise OracleError(f"{path}: expected a 'rate' column")
        try:
            return np.array([float(r["rate"]) for r in reader])
        except ValueError as exc:
            raise OracleError(f"{path}: {exc}") from None


def load_table_oracle(directory, ds: Dataset) -> TableOracle:
    """Read ``predictions.csv`` and any ``grid_<feature>.csv`` / ``grid_<a>__<b>.csv``.

    Single-feature grids have columns ``row,value,rate``; pair grids have
    ``row,value_a,value_b,rate``. Values are raw labels or numbers.
    """
    directory = Path(directory)
    rates = _read_rate_column(directory / "predictions.csv")
    grids = {}
    for path in sorted(directory.glob("grid_*.csv")):
        stem = path.stem[len("grid_"):]
        with open(path, newline="", encoding="utf-8") as fh:
            recs = list(csv.DictReader(fh))
        if "__" in stem:
            a, b = stem.split("__", 1)
            ia, ib = ds.index(a), ds.index(b)
            grids[(a, b)] = (
                np.array([int(r["row"]) for r in recs]),
                np.array([ds.encode_value(ia, r["value_a"]) for r in recs]),
                np.array([ds.encode_value(ib, r["value_b"]) for r in recs]),
                np.array([float(r["rate"]) for r in recs]),
            )
        else:
            j = ds.index(stem)
            grids[stem] = (
                np.array([int(r["row"]) for r in recs]),
                np.array([ds.encode_value(j, r["value"]) for r in recs]),
                np.array([float(r["rate"]) for r in recs]),
            )
    return table_oracle(rates, ds, grids)


def write_table_oracle(oracle: PredictionOracle, ds: Dataset, directory,
                       features=None, pairs=()) -> None:
    """Export an oracle as prediction tables that :func:`load_table_oracle` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate"])
        for r in oracle.predict_rate(ds.X):
            w.writerow([repr(float(r))])
    for name in features if features is not None else ds.names:
        j = ds.index(name)
        vals = np.unique(ds.X[:, j])
        with open(directory / f"grid_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "value", "rate"])
            for v in vals:
                X = ds.X.copy()
                X[:, j] = v
                for i, r in enumerate(oracle.predict_rate(X)):
                    w.writerow([i, ds.format_value(j, v), repr(float(r))])
    for a, b in pairs:
        ia, ib = ds.index(a), ds.index(b)
        combos = np.unique(ds.X[:, [ia, ib]], axis=0)
        with open(directory / f"grid_{a}__{b}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "value_a", "value_b", "rate"])
            for va, vb in combos:
                X = ds.X.copy()
                X[:, ia] = va
                X[:, ib] = vb
                for i, r in enumerate(oracle.predict_rate(X)):
                    w.writerow([i, ds.format_value(ia, va), ds.format_value(ib, vb), repr(float(r))])
