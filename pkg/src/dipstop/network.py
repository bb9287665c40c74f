"""Hourglass denoiser network: strided encoder, skip links, upsampling decoder."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, IOFailureError, ShapeError
from .image import Image
from .risk import from_tensor, to_tensor

LEAKY_SLOPE = 0.1
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("leaky_relu", "relu")
UPSAMPLE_MODES = ("bilinear", "nearest")
NORMS = ("batch", "none")


@dataclass(frozen=True)
class ArchSpec:
    """Hourglass architecture description.

    channels[i] is the encoder width at level i (top to bottom) and
    skip_channels[i] the width of the 1x1 skip branch feeding the decoder
    at that level (0 disables the skip).
    """

    depth: int = 4
    channels: tuple[int, ...] = (32, 64, 64, 128)
    skip_channels: tuple[int, ...] = (4, 4, 4, 4)
    activation: str = "leaky_relu"
    upsample: str = "bilinear"
    norm: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "skip_channels", tuple(int(s) for s in self.skip_channels))
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if len(self.channels) != self.depth or len(self.skip_channels) != self.depth:
            raise ConfigError("channels and skip_channels must have one entry per level")
        if any(c < 1 for c in self.channels) or any(s < 0 for s in self.skip_channels):
            raise ConfigError("channels must be positive and skip_channels non-negative")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.upsample not in UPSAMPLE_MODES:
            raise ConfigError(f"upsample must be one of {UPSAMPLE_MODES}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "channels": list(self.channels),
            "skip_channels": list(self.skip_channels),
            "activation": self.activation,
            "upsample": self.upsample,
            "norm": self.norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _block(spec: ArchSpec, cin: int, cout: int, stride: int = 1, kernel: int = 3) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, padding_mode="reflect")
    ]
    if spec.norm == "batch":
        # track_running_stats=False keeps the forward a pure function of
        # the input (batch statistics only, no hidden state updates)
        layers.append(nn.BatchNorm2d(cout, track_running_stats=False))
    if spec.activation == "leaky_relu":
        layers.append(nn.LeakyReLU(LEAKY_SLOPE))
    else:
        layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class DenoiserNetwork(nn.Module):
    """Shape-preserving hourglass map h(y; theta).

    Inputs are reflect-padded on the bottom/right up to a multiple of
    2^depth and cropped back, so arbitrary sizes >= 8 pass through.
    """

    def __init__(self, architecture: ArchSpec, channels_in_out: int, rng_seed: int = 0):
        super().__init__()
        self.architecture = architecture
        self.channels_in_out = channels_in_out
        self.rng_seed = rng_seed
        spec = architecture
        self.enc = nn.ModuleList()
        self.skip = nn.ModuleList()
        self.dec = nn.ModuleList()
        prev = channels_in_out
        for c, s in zip(spec.channels, spec.skip_channels):
            self.enc.append(nn.Sequential(_block(spec, prev, c, stride=2), _block(spec, c, c)))
            self.skip.append(_block(spec, prev, s, kernel=1) if s > 0 else None)
            prev = c
        up_prev = spec.channels[-1]
        for i in reversed(range(spec.depth)):
            cout = spec.channels[i - 1] if i > 0 else spec.channels[0]
            cat = up_prev + spec.skip_channels[i]
            self.dec.append(nn.Sequential(_block(spec, cat, cout), _block(spec, cout, cout)))
            up_prev = cout
        self.final = nn.Conv2d(up_prev, channels_in_out, 1)

    def _pad_to_grid(self, t: torch.Tensor) -> torch.Tensor:
        grid = 1 << self.architecture.depth
        # batch statistics need more than one element per channel, so keep
        # the bottleneck at least 2 x 2 when batch norm is enabled
        min_side = 2 * grid if self.architecture.norm == "batch" else grid
        target_h = max(-(-t.shape[2] // grid) * grid, min_side)
        target_w = max(-(-t.shape[3] // grid) * grid, min_side)
        pad_h = target_h - t.shape[2]
        pad_w = target_w - t.shape[3]
        # reflect padding must be smaller than the padded dimension, so
        # large pads are applied in chunks
        while pad_h > 0 or pad_w > 0:
            step_h = min(pad_h, t.shape[2] - 1)
            step_w = min(pad_w, t.shape[3] - 1)
            t = F.pad(t, (0, step_w, 0, step_h), mode="reflect")
            pad_h -= step_h
            pad_w -= step_w
        return t

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.ndim != 4 or y.shape[1] != self.channels_in_out:
            raise ShapeError(
                f"expected 1 x {self.channels_in_out} x H x W input, got {tuple(y.shape)}"
            )
        h0, w0 = y.shape[2], y.shape[3]
        t = self._pad_to_grid(y)
        feats = [t]
        for enc in self.enc:
            feats.append(enc(feats[-1]))
        u = feats[-1]
        mode = self.architecture.upsample
        for j, dec in enumerate(self.dec):
            i = self.architecture.depth - 1 - j
            if mode == "bilinear":
                u = F.interpolate(u, scale_factor=2, mode="bilinear", align_corners=False)
            else:
                u = F.interpolate(u, scale_factor=2, mode="nearest")
            if self.skip[i] is not None:
                u = torch.cat([u, self.skip[i](feats[i])], dim=1)
            u = dec(u)
        out = self.final(u)
        return out[:, :, :h0, :w0]


def _init_parameters(net: DenoiserNetwork, seed: int) -> None:
    """Deterministic Kaiming-style init driven by a numpy generator."""
    rng = np.random.default_rng(seed)
    gain = float(np.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2)))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                std = gain / float(np.sqrt(fan_in))
                vals = rng.normal(0.0, std, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
            elif "weight" in name:
                p.fill_(1.0)  # norm scale
            else:
                p.zero_()


def init_network(
    spec: ArchSpec,
    channels_in_out: int,
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> DenoiserNetwork:
    """Build an hourglass denoiser with reproducible random parameters."""
    if channels_in_out not in (1, 3):
        raise ConfigError("channels_in_out must be 1 or 3")
    net = DenoiserNetwork(spec, channels_in_out, rng_seed=seed)
    net = net.to(dtype)
    _init_parameters(net, seed)
    net.train()  # batch-norm uses batch statistics; forward stays deterministic
    return net


def forward(net: DenoiserNetwork, img: Image) -> Image:
    """Apply the denoiser to an Image without tracking gradients."""
    if img.channels != net.channels_in_out:
        raise ShapeError(f"network expects {net.channels_in_out} channels, got {img.channels}")
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        out = net(to_tensor(img, dtype))
    return from_tensor(out)


def save_checkpoint(net: DenoiserNetwork, path: str) -> None:
    """Write a self-describing checkpoint: versioned header plus parameters."""
    header = {
        "version": CHECKPOINT_VERSION,
        "architecture": net.architecture.to_dict(),
        "channels_in_out": net.channels_in_out,
        "rng_seed": net.rng_seed,
        "dtype": str(next(net.parameters()).dtype).replace("torch.", ""),
    }
    arrays = {
        f"param/{name}": p.detach().cpu().numpy() for name, p in net.named_parameters()
    }
    try:
        with open(path, "wb") as fh:
            np.savez(fh, header=json.dumps(header, sort_keys=True), **arrays)
    except OSError as exc:
        raise IOFailureError(f"cannot write checkpoint {path!r}: {exc}") from exc


def load_checkpoint(path: str) -> DenoiserNetwork:
    """Rebuild a network from a checkpoint written by save_checkpoint."""
    try:
        blob = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise IOFailureError(f"cannot read checkpoint {path!r}: {exc}") from exc
    header = json.loads(str(blob["header"]))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
    spec = ArchSpec.from_dict(header["architecture"])
    dtype = getattr(torch, header["dtype"])
    net = init_network(spec, header["channels_in_out"], header["rng_seed"], dtype=dtype)
    with torch.no_grad():
        for name, p in net.named_parameters():
            p.copy_(torch.from_numpy(blob[f"param/{name}"]).to(p.dtype))
    return net
