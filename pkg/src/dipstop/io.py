"""Image file I/O: 8- and 16-bit PNG, PGM, and PPM via OpenCV."""

from __future__ import annotations

import os

import cv2
import numpy as np

from .errors import DomainError, IOFailureError
from .image import Image

SUPPORTED_EXTENSIONS = (".png", ".pgm", ".ppm")


def read_image(path: str) -> Image:
    """Read a PNG/PGM/PPM file and rescale intensities to [0, 1].

    Integer samples are divided by (2^bits - 1), so an 8-bit 255 and a
    16-bit 65535 both map to 1.0. Color images come back as H x W x 3 in
    RGB order; grayscale as H x W x 1.
    """
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOFailureError(f"cannot read image file {path!r}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IOFailureError(f"unsupported sample type {raw.dtype} in {path!r}")
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    elif arr.shape[2] == 3:
        arr = arr[:, :, ::-1]  # BGR to RGB
    elif arr.shape[2] == 4:
        arr = arr[:, :, 2::-1]  # drop alpha
    return Image(arr)


def write_image(img: Image, path: str, bits: int = 8) -> None:
    """Write an image as 8- or 16-bit PNG/PGM/PPM.

    Values are clipped to [0, 1] and quantized by rounding to the nearest
    representable level; a read-back therefore matches the clipped input
    to within half of one quantization step.
    """
    if bits not in (8, 16):
        raise DomainError("bits must be 8 or 16")
    ext = os.path.splitext(path)[1].lower()
    if ext not in SUPPORTED_EXTENSIONS:
        raise IOFailureError(f"unsupported image extension {ext!r}")
    levels = (1 << bits) - 1
    arr = np.clip(img.data, 0.0, 1.0)
    quant = np.rint(arr * levels)
    raw = quant.astype(np.uint8 if bits == 8 else np.uint16)
    if raw.shape[2] == 1:
        raw = raw[:, :, 0]
    else:
        raw = raw[:, :, ::-1]  # RGB to BGR
    ok = cv2.imwrite(os.fspath(path), raw)
    if not ok:
        raise IOFailureError(f"cannot write image file {path!r}")
