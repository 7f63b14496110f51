"""Synthetic multi-coil data: ellipse phantoms, smooth coil maps, regular sampling."""

from __future__ import annotations

import numpy as np

from ..recon.sense import build_sense


def phantom(n: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of random ellipses times a smooth (linear plus constant) phase."""
    c = (np.arange(n) - n / 2 + 0.5) / (n / 2)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    img = np.zeros((n, n))
    for _ in range(int(rng.integers(3, 8))):
        cx, cy = rng.uniform(-0.5, 0.5, 2)
        ax, ay = rng.uniform(0.1, 0.6, 2)
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        img[(u / ax) ** 2 + (v / ay) ** 2 <= 1] += rng.uniform(0.2, 1.0)
    a, b, p0 = rng.uniform(-1, 1, 3)
    return img * np.exp(1j * (a * xx + b * yy + np.pi * p0))


def coil_maps(n: int, coils: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-profile coils around the image with smooth phase, ``sum |C|^2 = 1``."""
    c = (np.arange(n) - n / 2 + 0.5) / (n / 2)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    maps = np.empty((n, n, coils), dtype=np.complex128)
    rot = rng.uniform(0, 2 * np.pi)
    for k in range(coils):
        ang = rot + 2 * np.pi * k / coils
        px, py = 1.2 * np.cos(ang), 1.2 * np.sin(ang)
        mag = np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / 1.5)
        ph = rng.uniform(-0.5, 0.5) * (xx * np.cos(ang) + yy * np.sin(ang)) + rng.uniform(0, 2 * np.pi)
        maps[..., k] = mag * np.exp(1j * ph)
    return maps / np.sqrt((np.abs(maps) ** 2).sum(axis=-1, keepdims=True))


def sampling_lines(n: int, accel: int, acl: int) -> np.ndarray:
    """Boolean mask of sampled phase-encode lines: every ``accel``-th plus the center block."""
    if accel < 1:
        raise ValueError("acceleration must be at least 1")
    if not 0 <= acl <= n:
        raise ValueError(f"{acl} calibration lines do not fit {n} lines")
    lines = np.arange(n) % accel == 0
    start = n // 2 - acl // 2
    lines[start:start + acl] = True
    return lines


def simulate(num_slices: int, image_size: int, coils: int, accel: int, acl_lines: int, noise_sigma: float,
             seed: int = 0) -> dict:
    """Arrays in ``(X, Y, COIL, MAPS, BATCH)`` layout.

    Returns ``kspace``, ``coils``, ``reference`` (the phantom) and
    ``pattern``.  Noise is complex Gaussian with standard deviation
    ``noise_sigma`` per real component, added at sampled locations only.
    """
    if num_slices < 1 or image_size < 2 or coils < 1:
        raise ValueError("invalid geometry")
    if noise_sigma < 0:
        raise ValueError("noise level must be non-negative")
    rng = np.random.default_rng(seed)
    n = image_size
    lines = sampling_lines(n, accel, acl_lines)
    pattern = np.broadcast_to(lines[None, :, None, None, None], (n, n, 1, 1, num_slices)).astype(np.complex128)
    ref = np.empty((n, n, 1, 1, num_slices), dtype=np.complex128)
    cmaps = np.empty((n, n, coils, 1, num_slices), dtype=np.complex128)
    for s in range(num_slices):
        ref[:, :, 0, 0, s] = phantom(n, rng)
        cmaps[:, :, :, 0, s] = coil_maps(n, coils, rng)
    A = build_sense(cmaps, pattern)
    k = A.forward(ref)
    if noise_sigma > 0:
        noise = rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape)
        k = k + noise_sigma * noise * pattern
    return {"kspace": k.astype(np.complex64), "coils": cmaps.astype(np.complex64),
            "reference": ref.astype(np.complex64), "pattern": pattern.astype(np.complex64)}
