import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from pdsurrogate.data import Dataset, FeatureSpec  # noqa: E402


def make_dataset(X, specs, y=None, exposure=None):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    y = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    t = np.ones(n) if exposure is None else np.asarray(exposure, dtype=float)
    return Dataset(tuple(specs), X, y, t)


@pytest.fixture
def small_mixed():
    """40 rows: one continuous, one nominal, one ordinal feature, Poisson counts."""
    rng = np.random.default_rng(3)
    n = 40
    specs = (FeatureSpec("x", "continuous"), FeatureSpec("c", "nominal", ("a", "b", "c")),
             FeatureSpec("o", "ordinal", ("lo", "hi")))
    X = np.column_stack([rng.integers(0, 6, n), rng.integers(0, 3, n), rng.integers(0, 2, n)])
    t = rng.uniform(0.2, 1.0, n)
    y = rng.poisson(0.8 * t)
    return Dataset(specs, X.astype(float), y.astype(float), t)
