"""Per-slice intensity normalization of k-space data."""

from __future__ import annotations

import numpy as np

from .sense import BATCH, build_sense


def normalize(x0, y, batch_axis: int | None = None):
    """Scale so that ``max |x0| = 1``; returns ``(scale, scale * y)``.

    With ``batch_axis`` each slice along it gets its own scale (kept as a
    broadcastable array).
    """
    x0 = np.asarray(x0)
    axes = None if batch_axis is None else tuple(a for a in range(x0.ndim) if a != batch_axis)
    m = np.abs(x0).max(axis=axes, keepdims=batch_axis is not None)
    if np.any(m == 0):
        raise ValueError("cannot normalize an all-zero adjoint reconstruction")
    scale = 1.0 / m
    if batch_axis is None:
        return float(scale), np.asarray(y) * scale
    return scale, np.asarray(y) * scale


def normalize_kspace(kspace, coils, pattern):
    """Per-slice scale from ``A^H y``; returns ``(scale, scaled kspace)``."""
    A = build_sense(coils, pattern)
    return normalize(A.adjoint(kspace), kspace, batch_axis=BATCH)
