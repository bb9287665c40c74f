"""Image container and validation for H x W x C float rasters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, SizeError

MIN_SIDE = 8
VALID_CHANNELS = (1, 3)


@dataclass(frozen=True)
class Image:
    """Dense H x W x C raster of float64 intensities.

    Reference (clean) images live in [0, 1]; noisy observations may
    exceed that range and are deliberately not clipped.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ShapeError(f"image must be H x W x C, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise SizeError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
        if c not in VALID_CHANNELS:
            raise ShapeError(f"channels must be one of {VALID_CHANNELS}, got {c}")
        if not np.isfinite(arr).all():
            raise DomainError("image contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def clipped(self) -> "Image":
        """Return a copy clipped to [0, 1] (display convention)."""
        return Image(np.clip(self.data, 0.0, 1.0))


def as_image(value) -> Image:
    """Coerce an array or Image to an Image."""
    if isinstance(value, Image):
        return value
    return Image(np.asarray(value))


def check_same_shape(a: Image, b: Image) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model metadata: Gaussian sigma or Poisson zeta, plus the seed."""

    kind: str
    sigma: float = 0.0
    zeta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if self.kind == "poisson" and self.zeta <= 0:
            raise DomainError("zeta must be > 0")


@dataclass(frozen=True)
class QualityReport:
    """Full-reference quality scores for one image pair."""

    psnr_db: float
    ssim: float = field(default=float("nan"))
