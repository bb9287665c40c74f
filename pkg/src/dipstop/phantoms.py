"""Synthetic test images: deterministic phantoms with smooth and detailed regions."""

from __future__ import annotations

import numpy as np

from .errors import DomainError, SizeError
from .image import MIN_SIDE, Image

PHANTOM_KINDS = ("gradient", "checkerboard", "disks", "text-like")


def generate_phantom(kind: str, h: int, w: int, c: int = 1, seed: int = 0) -> Image:
    """Generate a deterministic phantom image in [0, 1].

    Parameters
    ----------
    kind : str
        One of ``gradient``, ``checkerboard``, ``disks``, ``text-like``.
    h, w : int
        Output height and width, each at least 8.
    c : int
        Channel count, 1 or 3.
    seed : int
        Seed for the randomized kinds (``disks``, ``text-like``).

    Returns
    -------
    Image
        Phantom with values in [0, 1], bitwise reproducible for fixed
        arguments.
    """
    if h < MIN_SIDE or w < MIN_SIDE:
        raise SizeError(f"phantom must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    if kind not in PHANTOM_KINDS:
        raise DomainError(f"unknown phantom kind {kind!r}")
    if kind == "gradient":
        plane = _gradient(h, w)
        data = np.repeat(plane[:, :, np.newaxis], c, axis=2)
    elif kind == "checkerboard":
        plane = _checkerboard(h, w)
        data = np.repeat(plane[:, :, np.newaxis], c, axis=2)
    elif kind == "disks":
        data = _disks(h, w, c, seed)
    else:
        plane = _text_like(h, w, seed)
        data = np.repeat(plane[:, :, np.newaxis], c, axis=2)
    return Image(np.clip(data, 0.0, 1.0))


def _gradient(h: int, w: int) -> np.ndarray:
    """Rows ramp linearly from 0 (top row) to 1 (bottom row)."""
    ramp = np.linspace(0.0, 1.0, h)
    return np.repeat(ramp[:, np.newaxis], w, axis=1)


def _checkerboard(h: int, w: int) -> np.ndarray:
    """Alternating 0/1 blocks; the board is 8 blocks along the short side."""
    bs = max(1, min(h, w) // 8)
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy // bs) + (xx // bs)) % 2).astype(np.float64)


def _disks(h: int, w: int, c: int, seed: int) -> np.ndarray:
    """Smooth diagonal ramp with hard-edged disks of random intensity."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.25 + 0.5 * (xx + yy) / (h + w - 2)
    data = np.repeat(base[:, :, np.newaxis], c, axis=2)
    for _ in range(6):
        cy = rng.uniform(0.15, 0.85) * h
        cx = rng.uniform(0.15, 0.85) * w
        r = rng.uniform(0.06, 0.18) * min(h, w)
        vals = rng.uniform(0.0, 1.0, size=c)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        for k in range(c):
            data[:, :, k] = np.where(mask, vals[k], data[:, :, k])
    return data


def _text_like(h: int, w: int, seed: int) -> np.ndarray:
    """Dark glyph-like strokes on a light background."""
    rng = np.random.default_rng(seed)
    img = np.full((h, w), 0.9)
    n_strokes = max(6, (h * w) // 200)
    for _ in range(n_strokes):
        y0 = int(rng.integers(0, h))
        x0 = int(rng.integers(0, w))
        length = int(rng.integers(2, max(3, min(h, w) // 4)))
        dy, dx = [(0, 1), (1, 0), (1, 1)][int(rng.integers(0, 3))]
        val = rng.uniform(0.0, 0.25)
        for t in range(length):
            y, x = y0 + dy * t, x0 + dx * t
            if 0 <= y < h and 0 <= x < w:
                img[y, x] = val
    return img
