"""Kernel backend selection.

The compiled extension is used when it was built and ``PDSURROGATE_PURE`` is
unset; otherwise the numpy implementations are used. Both give identical
results.
"""
import os

from . import _pykernels

try:
    if os.environ.get("PDSURROGATE_PURE"):
        raise ImportError("pure backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"

dp_cluster = _impl.dp_cluster
build_histograms = _impl.build_histograms
predict_ensemble = _impl.predict_ensemble

__all__ = ["BACKEND", "dp_cluster", "build_histograms", "predict_ensemble"]
