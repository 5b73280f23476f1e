"""Generalized linear models on dummy-coded categorical terms, fitted by IRLS."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .segment import SegmentedData

logger = logging.getLogger(__name__)

FAMILIES = ("poisson_log", "normal_identity")


class ConvergenceError(RuntimeError):
    pass


def poisson_deviance(y, mu) -> float:
    """Mean Poisson deviance ``(2/n) sum[y ln(y/mu) - (y - mu)]`` with ``0 ln 0 = 0``."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != mu.shape:
        raise ValueError("y and mu must have the same shape")
    if np.any(~(mu > 0)):
        raise ValueError("Poisson deviance needs strictly positive predictions")
    pos = y > 0
    term = np.zeros_like(y)
    term[pos] = y[pos] * np.log(y[pos] / mu[pos])
    return float(2.0 * np.mean(term - (y - mu)))


class Family:
    name = ""

    def linkinv(self, eta):
        raise NotImplementedError

    def dmu_deta(self, mu):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def deviance(self, y, mu) -> float:
        """Total (not mean) deviance."""
        raise NotImplementedError

    def start(self, y):
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError


class PoissonLog(Family):
    name = "poisson_log"

    def linkinv(self, eta):
        return np.exp(eta)

    def link(self, mu):
        return np.log(mu)

    def dmu_deta(self, mu):
        return mu

    def variance(self, mu):
        return mu

    def deviance(self, y, mu):
        # tolerates mu underflowing to 0 on all-zero cells
        pos = y > 0
        term = mu - y
        term[pos] += y[pos] * np.log(y[pos] / mu[pos])
        return float(2.0 * np.sum(term))

    def start(self, y):
        return y + 0.5


class NormalIdentity(Family):
    name = "normal_identity"

    def linkinv(self, eta):
        return eta

    def link(self, mu):
        return mu

    def dmu_deta(self, mu):
        return np.ones_like(mu)

    def variance(self, mu):
        return np.ones_like(mu)

    def deviance(self, y, mu):
        return float(np.sum((y - mu) ** 2))

    def start(self, y):
        return np.asarray(y, dtype=np.float64).copy()


def get_family(name: str) -> Family:
    if name == "poisson_log":
        return PoissonLog()
    if name == "normal_identity":
        return NormalIdentity()
    raise ValueError(f"unknown family {name!r}; choose from {FAMILIES}")


@dataclass
class Term:
    name: str
    labels: list[str]
    reference: int

    @property
    def non_reference(self) -> list[int]:
        return [g for g in range(len(self.labels)) if g != self.reference]


@dataclass
class DesignInfo:
    """Column layout: intercept, then one dummy per non-reference level per term.

    ``columns[c]`` is ``(term_name, level_index)``; column 0 is the intercept
    ``("(Intercept)", -1)``. Numeric columns (benchmark LM only) use level -2.
    """

    terms: list[Term]
    columns: list[tuple[str, int]]
    numeric: list[str] = field(default_factory=list)

    @property
    def ncols(self) -> int:
        return len(self.columns)

    def term(self, name: str) -> Term:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def column_index(self) -> dict[tuple[str, int], int]:
        return {c: i for i, c in enumerate(self.columns)}

    def column_labels(self) -> list[str]:
        out = []
        for name, lev in self.columns:
            if lev == -1:
                out.append("(Intercept)")
            elif lev == -2:
                out.append(name)
            else:
                out.append(f"{name}={self.term(name).labels[lev]}")
        return out

    def to_dict(self) -> dict:
        return {
            "terms": [{"name": t.name, "levels": t.labels, "reference": t.labels[t.reference]}
                      for t in self.terms],
            "numeric": list(self.numeric),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignInfo":
        terms = [Term(t["name"], list(t["levels"]), t["levels"].index(t["reference"])) for t in d["terms"]]
        return make_design_info(terms, d.get("numeric", []))


def make_design_info(terms: list[Term], numeric: Sequence[str] = ()) -> DesignInfo:
    cols: list[tuple[str, int]] = [("(Intercept)", -1)]
    for t in terms:
        cols.extend((t.name, g) for g in t.non_reference)
    cols.extend((name, -2) for name in numeric)
    return DesignInfo(terms, cols, list(numeric))


def build_design(seg: SegmentedData, terms: Sequence[str] | None = None,
                 numeric: dict[str, np.ndarray] | None = None) -> tuple[DesignInfo, np.ndarray]:
    """Dummy-code the categorical ``terms`` of ``seg`` (plus raw numeric columns).

    The reference level of each term is its most populated level; terms with
    a single observed level are dropped with a warning.
    """
    names = list(seg.terms if terms is None else terms)
    kept = []
    for name in names:
        codes = seg.codes[name]
        k = len(seg.labels[name])
        counts = np.bincount(codes[codes >= 0], minlength=k)
        if np.count_nonzero(counts) <= 1:
            warnings.warn(f"term {name!r} is constant and is dropped", stacklevel=2)
            continue
        kept.append(Term(name, list(seg.labels[name]), int(np.argmax(counts))))
    numeric = numeric or {}
    info = make_design_info(kept, list(numeric))
    return info, design_matrix(info, seg, numeric)


def design_matrix(info: DesignInfo, seg: SegmentedData, numeric: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Rows of dummies for ``seg``; unseen interaction codes (-1) get all zeros."""
    X = np.zeros((seg.n, info.ncols))
    X[:, 0] = 1.0
    colix = info.column_index()
    for t in info.terms:
        codes = seg.codes[t.name]
        for g in t.non_reference:
            X[:, colix[(t.name, g)]] = codes == g
    for name in info.numeric:
        X[:, colix[(name, -2)]] = numeric[name]
    return X


def _aliased(X: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Columns linearly dependent on the columns before them."""
    if X.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    norms = np.linalg.norm(X, axis=0)
    r = np.linalg.qr(X, mode="r")
    diag = np.abs(np.diag(r)) if r.shape[0] >= X.shape[1] else np.concatenate(
        [np.abs(np.diag(r)), np.zeros(X.shape[1] - r.shape[0])])
    return (norms == 0) | (diag <= tol * np.maximum(norms, 1e-300))


@dataclass
class GlmFit:
    family: str
    beta: np.ndarray
    covariance: np.ndarray
    deviance: float
    design: DesignInfo
    converged: bool
    iterations: int
    aliased: np.ndarray
    dispersion: float = 1.0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return X @ self.beta

    def to_dict(self) -> dict:
        labels = self.design.column_labels()
        return {
            "family": self.family,
            "design": self.design.to_dict(),
            "coefficients": [{"name": lab, "beta": float(b), "se": float(s), "aliased": bool(a)}
                             for lab, b, s, a in zip(labels, self.beta, self.se, self.aliased)],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "deviance": self.deviance,
            "dispersion": self.dispersion,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmFit":
        coefs = d["coefficients"]
        return cls(d["family"], np.array([c["beta"] for c in coefs]), np.array(d["covariance"], dtype=np.float64),
                   float(d["deviance"]), DesignInfo.from_dict(d["design"]), bool(d["converged"]),
                   int(d["iterations"]), np.array([c["aliased"] for c in coefs], dtype=bool),
                   float(d.get("dispersion", 1.0)))


def fit_glm(design: DesignInfo, X: np.ndarray, y, offset=None, family: str = "poisson_log",
            max_iter: int = 50, tol: float = 1e-10) -> GlmFit:
    """Maximum likelihood by iteratively reweighted least squares.

    Aliased columns get coefficient 0 and are flagged. Convergence is declared
    when ``|dev - dev_old| / (|dev| + 0.1) < tol``.
    """
    fam = get_family(family)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=np.float64)
    if family == "poisson_log" and (np.any(y < 0)):
        raise ValueError("Poisson targets must be nonnegative")
    aliased = _aliased(X)
    if aliased.any():
        logger.info("dropping %d aliased column(s)", int(aliased.sum()))
    keep = np.flatnonzero(~aliased)
    Xk = X[:, keep]

    mu = fam.start(y)
    eta = fam.link(mu)
    dev_old = math.inf
    beta_k = np.zeros(keep.size)
    converged = False
    it = 0
    best = None
    for it in range(1, max_iter + 1):
        g = fam.dmu_deta(mu)
        w = g * g / fam.variance(mu)
        z = eta - offset + (y - mu) / g
        XtW = Xk.T * w
        A = XtW @ Xk
        try:
            beta_k = np.linalg.solve(A, XtW @ z)
        except np.linalg.LinAlgError:
            beta_k = np.linalg.lstsq(A, XtW @ z, rcond=None)[0]
        eta = Xk @ beta_k + offset
        mu = fam.linkinv(eta)
        dev = fam.deviance(y, mu)
        if not np.isfinite(dev):
            break
        if best is None or dev <= best[0]:
            best = (dev, beta_k.copy(), it)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev
    if not converged and best is not None:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations", stacklevel=2)
        dev, beta_k, _ = best
        eta = Xk @ beta_k + offset
        mu = fam.linkinv(eta)

    g = fam.dmu_deta(mu)
    w = g * g / fam.variance(mu)
    A = (Xk.T * w) @ Xk
    if family == "normal_identity":
        resid = max(n - keep.size, 0)
        dispersion = float(np.sum((y - mu) ** 2) / resid) if resid > 0 else 0.0
    else:
        dispersion = 1.0
    cov_k = dispersion * np.linalg.pinv(A)
    cov_k = (cov_k + cov_k.T) / 2.0
    beta = np.zeros(d)
    beta[keep] = beta_k
    cov = np.zeros((d, d))
    cov[np.ix_(keep, keep)] = cov_k
    return GlmFit(family, beta, cov, float(fam.deviance(y, mu)), design, converged, it, aliased, dispersion)


def glm_predict(fit: GlmFit, X: np.ndarray, exposure=None) -> np.ndarray:
    """Expected response: ``t * exp(l'beta)`` (Poisson-log) or ``l'beta`` (identity)."""
    eta = X @ fit.beta
    if fit.family == "poisson_log":
        t = np.ones(X.shape[0]) if exposure is None else np.asarray(exposure, dtype=np.float64)
        return t * np.exp(eta)
    return eta


@dataclass
class Interval:
    name: str
    beta: float
    se: float
    low: float
    high: float
    factor: float | None = None
    factor_low: float | None = None
    factor_high: float | None = None


def confidence_intervals(fit: GlmFit, level: float = 0.95) -> list[Interval]:
    """Wald intervals per coefficient, exponentiated for the log link."""
    if not fit.converged:
        raise ConvergenceError("confidence intervals need a converged fit")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    zq = stats.norm.ppf((1.0 + level) / 2.0)
    out = []
    for name, b, s in zip(fit.design.column_labels(), fit.beta, fit.se):
        lo, hi = b - zq * s, b + zq * s
        iv = Interval(name, float(b), float(s), float(lo), float(hi))
        if fit.family == "poisson_log":
            iv.factor, iv.factor_low, iv.factor_high = math.exp(b), math.exp(lo), math.exp(hi)
        out.append(iv)
    return out
