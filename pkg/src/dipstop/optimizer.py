"""Per-image optimization: objective selection, stopping, EMA, trace logging."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConfigError, DomainError, NonFiniteLossError
from .image import Image
from .metrics import psnr
from .network import DenoiserNetwork
from .risk import (
    df_gt,
    gaussian_risk_terms,
    poisson_risk_terms,
    sample_ste_randomness,
    to_tensor,
)

OBJECTIVES = ("dip", "dip_sure", "ste", "pure")
BASELINE_INPUTS = ("noisy_image", "fixed_noise")

_UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one optimization run.

    ``b`` (the upper bound of the uniform perturbation level) defaults to
    ``sigma`` when left as None. ``baseline_input`` selects the network
    input for the dip objective: a fixed noise tensor or the noisy image.
    """

    objective: str = "ste"
    sigma: float = 0.0
    b: Optional[float] = None
    zeta: float = 0.0
    eps: float = 1e-3
    lr: float = 0.1
    max_iters: int = 5000
    ema_beta: float = 0.99
    stop_window: int = 1
    seed: int = 0
    baseline_input: str = "fixed_noise"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.baseline_input not in BASELINE_INPUTS:
            raise ConfigError(f"baseline_input must be one of {BASELINE_INPUTS}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.b is None:
            object.__setattr__(self, "b", self.sigma)
        if self.b < 0:
            raise ConfigError("b must be >= 0")
        if not 0.0 <= self.ema_beta < 1.0:
            raise ConfigError("ema_beta must be in [0, 1)")
        if self.stop_window < 1:
            raise ConfigError("stop_window must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.objective == "pure":
            if self.zeta <= 0:
                raise ConfigError("pure objective requires zeta > 0")
            if self.eps <= 0:
                raise ConfigError("pure objective requires eps > 0")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "sigma": self.sigma,
            "b": self.b,
            "zeta": self.zeta,
            "eps": self.eps,
            "lr": self.lr,
            "max_iters": self.max_iters,
            "ema_beta": self.ema_beta,
            "stop_window": self.stop_window,
            "seed": self.seed,
            "baseline_input": self.baseline_input,
        }


@dataclass(frozen=True)
class TraceRecord:
    """One iteration of the optimization log."""

    iter: int
    total_loss: float
    data_fidelity: float
    divergence_term: float
    df_mc: Optional[float] = None
    psnr_to_x: Optional[float] = None
    df_gt: Optional[float] = None

    def to_dict(self) -> dict:
        d = {
            "iter": self.iter,
            "total_loss": self.total_loss,
            "data_fidelity": self.data_fidelity,
            "divergence_term": self.divergence_term,
        }
        for key in ("df_mc", "psnr_to_x", "df_gt"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        return cls(
            iter=int(d["iter"]),
            total_loss=float(d["total_loss"]),
            data_fidelity=float(d["data_fidelity"]),
            divergence_term=float(d["divergence_term"]),
            df_mc=None if d.get("df_mc") is None else float(d["df_mc"]),
            psnr_to_x=None if d.get("psnr_to_x") is None else float(d["psnr_to_x"]),
            df_gt=None if d.get("df_gt") is None else float(d["df_gt"]),
        )


@dataclass
class RunTrace:
    """Per-iteration records plus how and where the run stopped."""

    records: list[TraceRecord] = field(default_factory=list)
    stop_iter: int = 0
    stop_reason: str = "max_iters"
    meta: dict = field(default_factory=dict)

    @property
    def total_losses(self) -> list[float]:
        return [r.total_loss for r in self.records]

    def series(self, name: str) -> list[Optional[float]]:
        return [getattr(r, name) for r in self.records]

    def has_gt(self) -> bool:
        return any(r.psnr_to_x is not None for r in self.records)


@dataclass
class DenoiseResult:
    """Outputs of one run: last iterate, EMA iterate, and the trace.

    When ground truth was supplied, the peak-PSNR iterate and its
    iteration are kept as a diagnostic reference (never used to stop).
    """

    output_last: Image
    output_ema: Image
    trace: RunTrace
    output_peak: Optional[Image] = None
    peak_iter: Optional[int] = None
    peak_psnr: Optional[float] = None


def ema_update(prev: Optional[Image], new: Image, beta: float) -> Image:
    """Exponential moving average step: beta*prev + (1-beta)*new.

    The first call (prev None) returns ``new`` so the average starts at
    the first value rather than at zero.
    """
    if not 0.0 <= beta < 1.0:
        raise DomainError("beta must be in [0, 1)")
    if prev is None:
        return new
    return Image(beta * prev.data + (1.0 - beta) * new.data)


def zero_crossing_index(losses: Sequence[float], window: int = 1) -> Optional[int]:
    """First index whose trailing mean over ``window`` losses is <= 0.

    Indices with fewer than ``window`` preceding values are skipped;
    returns None when no crossing occurs (including empty input).
    """
    if window < 1:
        raise DomainError("window must be >= 1")
    losses = list(losses)
    for i in range(window - 1, len(losses)):
        if sum(losses[i - window + 1 : i + 1]) / window <= 0.0:
            return i
    return None


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Counter-based per-iteration stream: same seed and index, same draws."""
    key = np.array([seed & _UINT64_MASK, 0], dtype=np.uint64)
    counter = np.array([0, 0, 0, iteration & _UINT64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _input_noise_rng(seed: int) -> np.random.Generator:
    key = np.array([seed & _UINT64_MASK, 1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _to_float64_hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float64)


def optimize(
    net: DenoiserNetwork,
    y: Image,
    cfg: RunConfig,
    x_opt: Optional[Image] = None,
) -> DenoiseResult:
    """Fit the network to one noisy image and return the denoised outputs.

    Runs RAdam at cfg.lr. Each iteration draws its randomness (input
    perturbation, divergence probe) from a counter-based stream keyed by
    cfg.seed and the iteration index, so traces are bitwise reproducible.
    The self-supervised objectives (dip_sure, ste, pure) stop at the first
    zero crossing of the windowed total loss; the dip baseline never
    self-stops. Ground truth, when given, adds psnr_to_x and df_gt columns
    to the trace and tracks the peak-PSNR iterate as a diagnostic.
    """
    if y.channels != net.channels_in_out:
        raise ConfigError(f"network expects {net.channels_in_out} channels, got {y.channels}")
    dtype = next(net.parameters()).dtype
    y_t = to_tensor(y, dtype)
    shape_hwc = y.shape

    fixed_input = None
    if cfg.objective == "dip" and cfg.baseline_input == "fixed_noise":
        rng_in = _input_noise_rng(cfg.seed)
        fixed_input = to_tensor(rng_in.uniform(0.0, 0.1, size=shape_hwc), dtype)

    opt = torch.optim.RAdam(net.parameters(), lr=cfg.lr)
    trace = RunTrace(meta=_run_meta(net, cfg))
    losses: list[float] = []
    ema: Optional[np.ndarray] = None
    last_np: Optional[np.ndarray] = None
    peak: Optional[np.ndarray] = None
    peak_iter: Optional[int] = None
    peak_psnr = -math.inf
    stop_reason = "max_iters"
    stop_iter = cfg.max_iters - 1

    for it in range(cfg.max_iters):
        rng = iteration_rng(cfg.seed, it)
        opt.zero_grad()
        df_mc: Optional[float] = None
        if cfg.objective == "dip":
            net_in = fixed_input if fixed_input is not None else y_t
            out = net(net_in)
            loss = torch.mean((out - y_t) ** 2)
            fid, divterm = float(loss.detach()), 0.0
        elif cfg.objective in ("dip_sure", "ste"):
            b_eff = cfg.b if cfg.objective == "ste" else 0.0
            _, gamma, probe = sample_ste_randomness(shape_hwc, b_eff, rng)
            y2_t = (y_t + to_tensor(gamma, dtype)).requires_grad_(True)
            probe_t = to_tensor(probe.values, dtype)
            loss, out, fid, div = gaussian_risk_terms(
                net, y2_t, y_t, cfg.sigma, probe_t, create_graph=True
            )
            divterm = 2.0 * cfg.sigma * cfg.sigma * div
            df_mc = div
        else:  # pure
            probe_vals = rng.integers(0, 2, size=shape_hwc).astype(np.float64) * 2.0 - 1.0
            probe_t = to_tensor(probe_vals, dtype)
            loss, out, fid, divterm, offset = poisson_risk_terms(
                net, y_t, cfg.zeta, cfg.eps, probe_t
            )
            denom = 2.0 * offset
            df_mc = divterm / denom if denom != 0 else 0.0

        total = float(loss.detach())
        if not math.isfinite(total):
            trace.stop_iter = it - 1 if it > 0 else 0
            trace.stop_reason = "max_iters"
            raise NonFiniteLossError(
                f"non-finite loss {total} at iteration {it} (objective {cfg.objective})",
                trace=trace,
            )

        loss.backward()
        opt.step()

        # the ensemble averages the training forward's outputs, so for the
        # ste objective it averages over the input perturbations gamma
        out_np = _to_float64_hwc(out)
        last_np = out_np
        ema = out_np.copy() if ema is None else cfg.ema_beta * ema + (1.0 - cfg.ema_beta) * out_np

        psnr_val: Optional[float] = None
        dfgt_val: Optional[float] = None
        if x_opt is not None:
            out_img = Image(out_np)
            psnr_val = psnr(x_opt, out_img, clip=True)
            if cfg.sigma > 0:
                dfgt_val = df_gt(out_img, x_opt, y, cfg.sigma)
            if psnr_val > peak_psnr:
                peak_psnr = psnr_val
                peak = out_np.copy()
                peak_iter = it

        trace.records.append(
            TraceRecord(
                iter=it,
                total_loss=total,
                data_fidelity=fid,
                divergence_term=divterm,
                df_mc=df_mc,
                psnr_to_x=psnr_val,
                df_gt=dfgt_val,
            )
        )
        losses.append(total)

        if cfg.objective != "dip" and it >= cfg.stop_window - 1:
            tail = losses[it - cfg.stop_window + 1 :]
            if sum(tail) / cfg.stop_window <= 0.0:
                stop_reason = "zero_crossing"
                stop_iter = it
                break

    trace.stop_iter = stop_iter if stop_reason == "zero_crossing" else len(trace.records) - 1
    trace.stop_reason = stop_reason
    result = DenoiseResult(
        output_last=Image(last_np),
        output_ema=Image(ema),
        trace=trace,
    )
    if x_opt is not None and peak is not None:
        result.output_peak = Image(peak)
        result.peak_iter = peak_iter
        result.peak_psnr = peak_psnr
    return result


def _run_meta(net: DenoiserNetwork, cfg: RunConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "architecture": net.architecture.to_dict(),
        "channels_in_out": net.channels_in_out,
        "net_seed": net.rng_seed,
    }


def run_baseline_dip(
    net: DenoiserNetwork, y: Image, cfg: RunConfig, x: Image
) -> DenoiseResult:
    """Vanilla baseline: least-squares fit, oracle-reported peak iterate.

    Ground truth is mandatory because the baseline has no self-stopping
    rule; the result carries both the peak-PSNR iterate (oracle early
    stopping) and the final iterate.
    """
    if x is None:
        raise ConfigError("the dip baseline requires ground truth for oracle stopping")
    if cfg.objective != "dip":
        cfg = RunConfig(**{**cfg.to_dict(), "objective": "dip"})
    return optimize(net, y, cfg, x_opt=x)


TRACE_COLUMNS = (
    "iter",
    "total_loss",
    "data_fidelity",
    "divergence_term",
    "df_mc",
    "psnr_to_x",
    "df_gt",
)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return "%.17g" % value


def write_trace_ndjson(trace: RunTrace, path: str) -> None:
    """Write a trace as newline-delimited JSON: meta, records, summary."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": trace.meta}, sort_keys=True) + "\n")
        for rec in trace.records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        summary = {"stop_iter": trace.stop_iter, "stop_reason": trace.stop_reason}
        fh.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")


def write_trace_csv(trace: RunTrace, path: str) -> None:
    """Write a trace as CSV with meta/summary carried in comment lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# meta " + json.dumps(trace.meta, sort_keys=True) + "\n")
        summary = {"stop_iter": trace.stop_iter, "stop_reason": trace.stop_reason}
        fh.write("# summary " + json.dumps(summary, sort_keys=True) + "\n")
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for rec in trace.records:
            d = rec.to_dict()
            row = [str(rec.iter)] + [_fmt(d.get(col)) for col in TRACE_COLUMNS[1:]]
            fh.write(",".join(row) + "\n")


def read_trace(path: str) -> RunTrace:
    """Read a trace written by either writer (format sniffed from content)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _parse_ndjson(text)
    return _parse_csv(text)


def _parse_ndjson(text: str) -> RunTrace:
    trace = RunTrace()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if "meta" in obj:
            trace.meta = obj["meta"]
        elif "summary" in obj:
            trace.stop_iter = int(obj["summary"]["stop_iter"])
            trace.stop_reason = str(obj["summary"]["stop_reason"])
        else:
            trace.records.append(TraceRecord.from_dict(obj))
    return trace


def _parse_csv(text: str) -> RunTrace:
    trace = RunTrace()
    header: Optional[list[str]] = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("# meta "):
            trace.meta = json.loads(line[len("# meta ") :])
        elif line.startswith("# summary "):
            summary = json.loads(line[len("# summary ") :])
            trace.stop_iter = int(summary["stop_iter"])
            trace.stop_reason = str(summary["stop_reason"])
        elif line.startswith("#"):
            continue
        elif header is None:
            header = line.split(",")
        else:
            cells = line.split(",")
            d = {k: v for k, v in zip(header, cells) if v != ""}
            trace.records.append(TraceRecord.from_dict(d))
    return trace
