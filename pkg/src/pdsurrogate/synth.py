"""Synthetic claim-count data with a known piecewise-constant rate.

The generating log-rate is additive in three signal features plus one
pairwise interaction; two further features carry no signal::

    log rate = BASE_LOG_RATE + age effect (3 segments) + fuel effect
               + cover effect + fuel x cover correction

``truth()`` describes the groups a perfect distillation would find.
"""
from __future__ import annotations

import numpy as np

from .blackbox import FunctionOracle
from .data import Dataset, FeatureSpec

BASE_LOG_RATE = float(np.log(0.3))

AGE_RANGE = (18, 77)
# (first age of the segment, log effect); each segment runs to the next start
AGE_SEGMENTS = ((18, 0.5), (30, 0.0), (60, 0.3))
FUEL_LEVELS = ("diesel", "gasoline")
FUEL_EFFECT = (0.4, 0.0)
COVER_LEVELS = ("low", "mid", "high")
COVER_EFFECT = (0.0, 0.25, 0.5)
# extra log effect for diesel policies with high cover
INTERACTION_EFFECT = 0.7
NOISE_LEVELS = ("A", "B", "C", "D")
NOISE_CONT_RANGE = (0, 49)

FEATURES = (
    FeatureSpec("age", "continuous"),
    FeatureSpec("fuel", "nominal", FUEL_LEVELS),
    FeatureSpec("cover", "ordinal", COVER_LEVELS),
    FeatureSpec("noise_num", "continuous"),
    FeatureSpec("noise_cat", "nominal", NOISE_LEVELS),
)


def _age_effect(age: np.ndarray) -> np.ndarray:
    starts = np.array([s for s, _ in AGE_SEGMENTS], dtype=np.float64)
    effects = np.array([e for _, e in AGE_SEGMENTS])
    return effects[np.searchsorted(starts, age, side="right") - 1]


def true_log_rate(X: np.ndarray) -> np.ndarray:
    """Generating log-rate for rows laid out as :data:`FEATURES`."""
    X = np.asarray(X, dtype=np.float64)
    fuel = X[:, 1].astype(np.int64)
    cover = X[:, 2].astype(np.int64)
    out = BASE_LOG_RATE + _age_effect(X[:, 0]) + np.asarray(FUEL_EFFECT)[fuel] + np.asarray(COVER_EFFECT)[cover]
    out += INTERACTION_EFFECT * ((fuel == 0) & (cover == 2))
    return out


def true_rate(X: np.ndarray) -> np.ndarray:
    return np.exp(true_log_rate(X))


def true_oracle() -> FunctionOracle:
    return FunctionOracle(true_rate)


def make_synthetic(n: int = 20_000, seed: int = 0) -> Dataset:
    """Draw ``n`` policies with Poisson claim counts from the generating rate."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = np.column_stack([
        rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1, n),
        rng.integers(0, len(FUEL_LEVELS), n),
        rng.choice(len(COVER_LEVELS), n, p=[0.4, 0.35, 0.25]),
        rng.integers(NOISE_CONT_RANGE[0], NOISE_CONT_RANGE[1] + 1, n),
        rng.integers(0, len(NOISE_LEVELS), n),
    ]).astype(np.float64)
    exposure = rng.uniform(0.5, 1.0, n)
    y = rng.poisson(exposure * true_rate(X)).astype(np.float64)
    return Dataset(FEATURES, X, y, exposure, "nclaims", "expo")


def truth() -> dict:
    """Ground truth for recovery checks."""
    return {
        "k": {"age": len(AGE_SEGMENTS), "fuel": 2, "cover": 3},
        "noise": ["noise_num", "noise_cat"],
        "pair": ("fuel", "cover"),
    }
