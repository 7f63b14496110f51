"""Image quality metrics on magnitude images."""

from __future__ import annotations

import numpy as np


def eval_metrics(recon, reference, mask=None) -> dict:
    """``mse`` of magnitudes over the mask and ``psnr = 20 log10(max|ref| / rmse)``.

    ``psnr`` is ``inf`` when the images agree exactly.
    """
    r = np.abs(np.asarray(recon))
    f = np.abs(np.asarray(reference))
    if r.shape != f.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {f.shape}")
    m = np.ones(r.shape, dtype=bool) if mask is None else np.broadcast_to(np.abs(np.asarray(mask)) > 0, r.shape)
    if not m.any():
        raise ValueError("empty mask")
    mse = float(np.mean((r[m] - f[m]) ** 2))
    peak = float(f[m].max())
    psnr = float("inf") if mse == 0 else 20 * np.log10(peak / np.sqrt(mse))
    return {"mse": mse, "psnr": psnr}


def per_slice(recon, reference, mask=None, batch_axis=-1) -> list:
    """:func:`eval_metrics` for every slice along ``batch_axis``."""
    recon = np.asarray(recon)
    masks = None if mask is None else np.moveaxis(np.broadcast_to(np.asarray(mask), recon.shape), batch_axis, 0)
    recon = np.moveaxis(recon, batch_axis, 0)
    reference = np.moveaxis(np.asarray(reference), batch_axis, 0)
    if masks is None:
        masks = [None] * len(recon)
    return [eval_metrics(a, b, m) for a, b, m in zip(recon, reference, masks)]
