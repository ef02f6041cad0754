"""Select the kernel implementation at import time.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is used. ``TRACKMINE_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import importlib
import os
import warnings

BACKENDS = {
    "cython": "trackmine.discovery._kernels",
    "python": "trackmine.discovery._kernels_py",
}


def load(name: str):
    return importlib.import_module(BACKENDS[name])


def available() -> list[str]:
    names = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    requested = os.environ.get("TRACKMINE_BACKEND", "auto")
    if requested not in ("auto", *BACKENDS):
        raise ValueError(f"TRACKMINE_BACKEND must be one of auto, {', '.join(BACKENDS)}; got {requested!r}")
    if requested == "python":
        return "python", load("python")
    try:
        return "cython", load("cython")
    except ImportError:
        if requested == "cython":
            raise
        warnings.warn("compiled kernels not built; using the numpy fallback (slow at scale)", RuntimeWarning)
        return "python", load("python")


BACKEND, kernels = _select()
