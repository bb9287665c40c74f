"""Reference linear denoisers with known trace/risk, for estimator checks.

Each map is a torch module acting on 1 x C x H x W tensors in float64, so
the unbiased risk estimators can be validated against closed-form or
exactly computable oracles (trace, true MSE under known noise).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class IdentityMap(nn.Module):
    """h(y) = y; divergence per pixel is exactly 1."""

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return y.clone()


class ZeroMap(nn.Module):
    """h(y) = 0; divergence is exactly 0."""

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return torch.zeros_like(y)


class ScaleMap(nn.Module):
    """h(y) = alpha * y; divergence per pixel equals alpha."""

    def __init__(self, alpha: float):
        super().__init__()
        self.alpha = float(alpha)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.alpha * y


class BoxBlurMap(nn.Module):
    """3x3 box blur with reflect padding, applied per channel."""

    def __init__(self):
        super().__init__()
        kernel = torch.full((1, 1, 3, 3), 1.0 / 9.0, dtype=torch.float64)
        self.register_buffer("kernel", kernel)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        c = y.shape[1]
        padded = torch.nn.functional.pad(y, (1, 1, 1, 1), mode="reflect")
        weight = self.kernel.to(y.dtype).expand(c, 1, 3, 3)
        return torch.nn.functional.conv2d(padded, weight, groups=c)

    def dense_matrix(self, h: int, w: int) -> np.ndarray:
        """The N x N matrix this map applies to a flattened h x w plane."""
        n = h * w
        mat = np.zeros((n, n))
        eye = torch.eye(n, dtype=torch.float64)
        for j in range(n):
            col = eye[j].reshape(1, 1, h, w)
            mat[:, j] = self.forward(col).reshape(-1).numpy()
        return mat


class DenseMap(nn.Module):
    """h(vec(y)) = A @ vec(y) for an explicit square matrix A."""

    def __init__(self, matrix: np.ndarray):
        super().__init__()
        mat = np.asarray(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("matrix must be square")
        self.register_buffer("matrix", torch.from_numpy(mat))

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        flat = y.reshape(-1)
        if flat.numel() != self.matrix.shape[0]:
            raise ValueError(f"expected {self.matrix.shape[0]} elements, got {flat.numel()}")
        return (self.matrix.to(y.dtype) @ flat).reshape(y.shape)

    @property
    def trace(self) -> float:
        return float(torch.diagonal(self.matrix).sum())


def random_dense_map(n: int, seed: int, off_diag_scale: float = 0.1) -> DenseMap:
    """A well-conditioned random dense map: identity plus scaled noise.

    Keeping the off-diagonal mass small keeps the probe-to-probe variance
    of the Monte-Carlo divergence small relative to tr(A)/N, so averages
    over a few thousand probes pin the trace tightly.
    """
    rng = np.random.default_rng(seed)
    mat = np.eye(n) + off_diag_scale * rng.standard_normal((n, n))
    return DenseMap(mat)
