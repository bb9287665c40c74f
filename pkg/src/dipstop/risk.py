"""Risk estimators and degrees-of-freedom measures.

The public functions take numpy-backed Images and return plain floats
wrapped in RiskEstimate. The ``*_terms`` helpers work on torch tensors and
keep the autograd graph alive so the optimizer can backpropagate through
every term, including the Monte-Carlo divergence (a second-order gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import CapabilityError, DomainError
from .image import Image, check_same_shape
from .probes import ProbeVector, make_probe


@dataclass(frozen=True)
class RiskEstimate:
    """Decomposed objective value.

    total = data_fidelity + divergence_term - constant_offset on both the
    Gaussian and Poisson paths; df_mc is the per-pixel normalized
    divergence (divergence_term scaled by its 2*sigma^2 or 2*zeta*mean(y)
    prefactor), the Monte-Carlo degrees-of-freedom estimate.
    """

    data_fidelity: float
    divergence_term: float
    constant_offset: float
    total: float
    df_mc: float


def mse(a: Image, b: Image) -> float:
    """Mean squared difference over all H*W*C elements."""
    check_same_shape(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def to_tensor(img, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Convert an Image or H x W x C array to a 1 x C x H x W tensor."""
    arr = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1))
    if not chw.flags.writeable:
        chw = chw.copy()
    return torch.from_numpy(chw).unsqueeze(0).to(dtype)


def from_tensor(t: torch.Tensor) -> Image:
    """Convert a 1 x C x H x W tensor back to an Image."""
    arr = t.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float64)
    return Image(arr)


def model_dtype(h) -> torch.dtype:
    """Working dtype for a denoiser: its parameter dtype, else float64."""
    if isinstance(h, torch.nn.Module):
        for p in h.parameters():
            return p.dtype
    return torch.float64


def divergence_with_output(
    h: Callable[[torch.Tensor], torch.Tensor],
    y_in: torch.Tensor,
    probe_t: torch.Tensor,
    create_graph: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Monte-Carlo divergence probe'^T d(probe'^T h(y))/dy / N, plus h(y).

    ``y_in`` must require grad. A constant output (no dependence on the
    input) has divergence exactly zero. With ``create_graph`` the returned
    divergence stays differentiable w.r.t. the network parameters.
    """
    out = h(y_in)
    if out.shape != y_in.shape:
        raise CapabilityError(f"denoiser changed shape {tuple(y_in.shape)} -> {tuple(out.shape)}")
    if not out.requires_grad:
        return torch.zeros((), dtype=y_in.dtype), out
    s = (probe_t * out).sum()
    try:
        (g,) = torch.autograd.grad(s, y_in, create_graph=create_graph)
    except RuntimeError as exc:
        raise CapabilityError(f"cannot differentiate denoiser w.r.t. its input: {exc}") from exc
    div = (probe_t * g).sum() / y_in.numel()
    return div, out


def _check_probe(probe: ProbeVector, shape: tuple[int, ...], expected: str) -> None:
    if probe.distribution != expected:
        raise DomainError(f"probe must be {expected}, got {probe.distribution}")
    if tuple(probe.values.shape) != tuple(shape):
        raise DomainError(f"probe shape {probe.values.shape} does not match image shape {shape}")


def mc_divergence(h, y: Image, probe: ProbeVector) -> float:
    """Hutchinson-style divergence estimate (1/N) n'^T grad_y(n'^T h(y))."""
    _check_probe(probe, y.shape, "standard_normal")
    dtype = model_dtype(h)
    with torch.enable_grad():
        y_t = to_tensor(y, dtype).requires_grad_(True)
        probe_t = to_tensor(probe.values, dtype)
        div, _ = divergence_with_output(h, y_t, probe_t)
    return float(div)


def gaussian_risk_terms(
    h,
    y_in: torch.Tensor,
    y_target: torch.Tensor,
    sigma: float,
    probe_t: torch.Tensor,
    create_graph: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, float, float]:
    """One stochastic sample of the Gaussian unbiased risk objective.

    Returns (total loss tensor, network output tensor, data fidelity
    float, divergence float). The fidelity compares h(y_in) against
    y_target, and the divergence is taken w.r.t. y_in, which covers both
    the plain estimator (y_in == y_target == y) and the two-observation
    variant (y_in = y + gamma).
    """
    div, out = divergence_with_output(h, y_in, probe_t, create_graph=create_graph)
    fid = torch.mean((out - y_target) ** 2)
    total = fid + (2.0 * sigma * sigma) * div - sigma * sigma
    return total, out, float(fid.detach()), float(div.detach())


def _gaussian_estimate(fid: float, div: float, sigma: float) -> RiskEstimate:
    divergence_term = 2.0 * sigma * sigma * div
    offset = sigma * sigma
    return RiskEstimate(
        data_fidelity=fid,
        divergence_term=divergence_term,
        constant_offset=offset,
        total=fid + divergence_term - offset,
        df_mc=div,
    )


def sure_loss(h, y: Image, sigma: float, probe: ProbeVector) -> RiskEstimate:
    """Stein's unbiased risk estimate of the per-pixel MSE to the clean image.

    total = mse(y, h(y)) + 2 sigma^2 mc_divergence(h, y, probe) - sigma^2.
    Unbiased over the Gaussian noise ensemble for any fixed weakly
    differentiable denoiser.
    """
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    _check_probe(probe, y.shape, "standard_normal")
    dtype = model_dtype(h)
    with torch.enable_grad():
        y_t = to_tensor(y, dtype).requires_grad_(True)
        probe_t = to_tensor(probe.values, dtype)
        _, _, fid, div = gaussian_risk_terms(h, y_t, y_t.detach(), sigma, probe_t)
    return _gaussian_estimate(fid, div, sigma)


def sample_ste_randomness(
    shape: tuple[int, ...], b: float, rng_seed
) -> tuple[float, np.ndarray, ProbeVector]:
    """Draw the per-evaluation randomness of the two-observation objective.

    Returns (sigma_gamma, gamma, probe) where sigma_gamma ~ U(0, b), gamma
    ~ N(0, sigma_gamma^2 I), and probe is a fresh standard-normal vector.
    The draw order is fixed so b = 0 consumes the same stream and yields
    the same probe as b > 0.
    """
    if b < 0:
        raise DomainError("b must be >= 0")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    sigma_gamma = float(rng.uniform(0.0, b))
    gamma = rng.standard_normal(shape) * sigma_gamma
    probe_vals = rng.standard_normal(shape)
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else -1
    return sigma_gamma, gamma, ProbeVector(probe_vals, "standard_normal", seed=int(seed))


def ste_loss(h, y: Image, sigma: float, b: float, rng_seed) -> RiskEstimate:
    """Two-observation unbiased risk estimate with input perturbation.

    Feeds y2 = y + gamma to the denoiser while keeping y as the fidelity
    target; the divergence is taken w.r.t. y2. With b = 0 this reduces
    exactly to sure_loss with the probe drawn from the same stream.
    """
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    _, gamma, probe = sample_ste_randomness(y.shape, b, rng_seed)
    dtype = model_dtype(h)
    with torch.enable_grad():
        y_t = to_tensor(y, dtype)
        y2_t = (y_t + to_tensor(gamma, dtype)).requires_grad_(True)
        probe_t = to_tensor(probe.values, dtype)
        _, _, fid, div = gaussian_risk_terms(h, y2_t, y_t, sigma, probe_t)
    return _gaussian_estimate(fid, div, sigma)


def poisson_risk_terms(
    h,
    y_t: torch.Tensor,
    zeta: float,
    eps: float,
    probe_t: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, float, float, float]:
    """One stochastic sample of the Poisson unbiased risk objective.

    Uses two forward passes and no input gradient: the divergence-like
    term is (2 zeta / eps) mean(probe * y * (h(y + eps*probe) - h(y))).
    Returns (total tensor, output tensor, fidelity, divergence term,
    offset), the last three as floats.
    """
    out = h(y_t)
    out_p = h(y_t + eps * probe_t)
    fid = torch.mean((out - y_t) ** 2)
    divterm = (2.0 * zeta / eps) * torch.mean(probe_t * y_t * (out_p - out))
    offset = zeta * torch.mean(y_t)
    total = fid + divterm - offset
    return total, out, float(fid.detach()), float(divterm.detach()), float(offset.detach())


def pure_loss(h, y: Image, zeta: float, eps: float, probe: ProbeVector) -> RiskEstimate:
    """Poisson unbiased risk estimate of the per-pixel MSE to the clean image.

    total = mse(h(y), y) - zeta*mean(y)
          + (2 zeta / eps) * mean(probe * y * (h(y + eps*probe) - h(y)))
    with a Rademacher probe and a small finite-difference step eps.
    """
    if zeta <= 0:
        raise DomainError("zeta must be > 0")
    if eps <= 0:
        raise DomainError("eps must be > 0")
    _check_probe(probe, y.shape, "rademacher")
    dtype = model_dtype(h)
    y_t = to_tensor(y, dtype)
    probe_t = to_tensor(probe.values, dtype)
    _, _, fid, divterm, offset = poisson_risk_terms(h, y_t, zeta, eps, probe_t)
    denom = 2.0 * offset
    df = divterm / denom if denom != 0 else 0.0
    return RiskEstimate(
        data_fidelity=fid,
        divergence_term=divterm,
        constant_offset=offset,
        total=fid + divterm - offset,
        df_mc=df,
    )


def df_gt(h_out: Image, x: Image, y: Image, sigma: float) -> float:
    """Ground-truth-based degrees of freedom, per-pixel normalized.

    [mse(x, h) - mse(y, h) + sigma^2] / (2 sigma^2): roughly 0 for a
    perfect denoiser, 1 for the identity map. Diagnostic only, needs x.
    """
    if sigma == 0:
        raise DomainError("df_gt requires sigma > 0")
    return (mse(x, h_out) - mse(y, h_out) + sigma * sigma) / (2.0 * sigma * sigma)


def estimate_optimism(h_out: Image, y: Image, y_tilde: Image) -> float:
    """Test-minus-train error gap for two noisy realizations of one scene.

    mse(y_tilde, h_out) - mse(y, h_out); its expectation equals
    2 sigma^2 times the degrees of freedom of the denoiser.
    """
    return mse(y_tilde, h_out) - mse(y, h_out)


def probe_for(shape: tuple[int, ...], distribution: str, seed: int) -> ProbeVector:
    """Convenience re-export of make_probe for callers of the risk API."""
    return make_probe(shape, distribution, seed)
