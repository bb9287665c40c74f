"""Benchmark grid runner: method x image x noise x seed, with a worker pool."""

from __future__ import annotations

import json
import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .errors import DipstopError, IOFailureError
from .image import Image
from .io import read_image
from .metrics import evaluate, psnr
from .network import ArchSpec, init_network
from .noise import add_gaussian_noise, add_poisson_noise
from .optimizer import RunConfig, optimize
from .phantoms import generate_phantom

GAUSSIAN_METHODS = ("dip", "dip_sure", "ste")
POISSON_METHODS = ("dip", "pure")

PHANTOM_CORPUS = (
    ("gradient", 0),
    ("checkerboard", 0),
    ("disks", 7),
    ("text-like", 11),
)
PHANTOM_SIZE = 64


@dataclass
class BenchRow:
    """One grid cell: a method applied to one noisy image."""

    image_id: str
    noise_kind: str
    noise_level: float
    method: str
    seed: int
    noise_seed: int
    psnr: Optional[float] = None
    psnr_ema: Optional[float] = None
    psnr_peak: Optional[float] = None
    ssim: Optional[float] = None
    stop_iter: Optional[int] = None
    stop_reason: Optional[str] = None
    wall_time_s: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class BenchmarkReport:
    """All rows plus per-method aggregates and the effective config."""

    rows: list[BenchRow] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def failed_rows(self) -> list[BenchRow]:
        return [r for r in self.rows if r.error is not None]


def _median(vals: list[float]) -> float:
    vals = sorted(vals)
    n = len(vals)
    mid = n // 2
    return vals[mid] if n % 2 else 0.5 * (vals[mid - 1] + vals[mid])


def compute_aggregates(rows: list[BenchRow]) -> list[dict]:
    """Per-method mean/median of the quality columns, recomputable from rows."""
    methods = sorted({r.method for r in rows})
    out = []
    for method in methods:
        ok = [r for r in rows if r.method == method and r.error is None]
        agg: dict = {"method": method, "rows": len(ok)}
        for col in ("psnr", "psnr_ema", "ssim"):
            vals = [getattr(r, col) for r in ok]
            vals = [v for v in vals if v is not None and math.isfinite(v)]
            if vals:
                agg[f"mean_{col}"] = sum(vals) / len(vals)
                agg[f"median_{col}"] = _median(vals)
        out.append(agg)
    return out


def noise_seed_for(image_id: str, level: float, seed: int) -> int:
    """Stable noise seed per (image, level, seed) cell, shared by methods."""
    tag = f"{image_id}|{level:.12g}|{seed}".encode()
    return zlib.crc32(tag) & 0x7FFFFFFF


def phantom_corpus(channels: int = 1) -> list[tuple[str, Image]]:
    """The built-in 64x64 phantom set used when no directory is given."""
    return [
        (f"{kind}{PHANTOM_SIZE}", generate_phantom(kind, PHANTOM_SIZE, PHANTOM_SIZE, channels, seed))
        for kind, seed in PHANTOM_CORPUS
    ]


def directory_corpus(path: str) -> list[tuple[str, Image]]:
    """Images from a directory, sorted by file name; these act as clean x."""
    names = sorted(
        n for n in os.listdir(path) if os.path.splitext(n)[1].lower() in (".png", ".pgm", ".ppm")
    )
    if not names:
        raise IOFailureError(f"no readable images in {path!r}")
    return [(os.path.splitext(n)[0], read_image(os.path.join(path, n))) for n in names]


def pool_width(requested: Optional[int] = None) -> int:
    """Worker-pool width, capped by the DIPSTOP_THREADS environment variable."""
    cap = os.environ.get("DIPSTOP_THREADS")
    width = requested if requested is not None else (os.cpu_count() or 1)
    if cap is not None:
        try:
            width = min(width, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, width)


def _run_cell(
    image_id: str,
    x: Image,
    noise_kind: str,
    level: float,
    method: str,
    seed: int,
    base_cfg: dict,
    arch: ArchSpec,
) -> BenchRow:
    nseed = noise_seed_for(image_id, level, seed)
    row = BenchRow(
        image_id=image_id,
        noise_kind=noise_kind,
        noise_level=level,
        method=method,
        seed=seed,
        noise_seed=nseed,
    )
    t0 = time.perf_counter()
    try:
        if noise_kind == "gaussian":
            y = add_gaussian_noise(x, level, nseed)
            cfg = RunConfig(
                **{**base_cfg, "objective": method, "sigma": level, "zeta": 0.0, "seed": seed}
            )
        else:
            y = add_poisson_noise(x, level, nseed)
            cfg = RunConfig(
                **{**base_cfg, "objective": method, "sigma": 0.0, "zeta": level, "seed": seed}
            )
        net = init_network(arch, x.channels, seed)
        result = optimize(net, y, cfg, x_opt=x)
        trace = result.trace
        row.stop_iter = trace.stop_iter
        row.stop_reason = trace.stop_reason
        row.psnr = psnr(x, result.output_last, clip=True)
        row.psnr_ema = psnr(x, result.output_ema, clip=True)
        if result.peak_psnr is not None:
            row.psnr_peak = result.peak_psnr
        row.ssim = evaluate(x, result.output_last.clipped()).ssim
    except (DipstopError, RuntimeError, ValueError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time_s = time.perf_counter() - t0
    return row


def run_bench(
    corpus: list[tuple[str, Image]],
    noise_kind: str,
    levels: list[float],
    methods: list[str],
    seeds: list[int],
    base_cfg: dict,
    arch: ArchSpec,
    threads: Optional[int] = None,
) -> BenchmarkReport:
    """Run the full grid and aggregate; failures are recorded per row.

    Every cell is isolated: it builds its own network and derives its own
    noise and optimization streams from the recorded seeds, so any row can
    be reproduced independently of pool scheduling.
    """
    allowed = GAUSSIAN_METHODS if noise_kind == "gaussian" else POISSON_METHODS
    for m in methods:
        if m not in allowed:
            raise DipstopError(f"method {m!r} is not valid under {noise_kind} noise")
    cells = [
        (image_id, x, noise_kind, level, method, seed)
        for image_id, x in corpus
        for level in levels
        for method in methods
        for seed in seeds
    ]
    rows: list[Optional[BenchRow]] = [None] * len(cells)
    width = pool_width(threads)
    keep = {k: v for k, v in base_cfg.items() if k in RunConfig().to_dict()}
    if width == 1:
        for i, cell in enumerate(cells):
            rows[i] = _run_cell(*cell, keep, arch)
    else:
        with ThreadPoolExecutor(max_workers=width) as pool:
            futures = [pool.submit(_run_cell, *cell, keep, arch) for cell in cells]
            rows = [f.result() for f in futures]
    report = BenchmarkReport(rows=list(rows))
    report.aggregates = compute_aggregates(report.rows)
    report.meta = {
        "noise_kind": noise_kind,
        "levels": levels,
        "methods": list(methods),
        "seeds": list(seeds),
        "config": dict(keep),
        "architecture": arch.to_dict(),
        "pool_width": width,
    }
    return report


ROW_COLUMNS = (
    "image_id",
    "noise_kind",
    "noise_level",
    "method",
    "seed",
    "noise_seed",
    "psnr",
    "psnr_ema",
    "psnr_peak",
    "ssim",
    "stop_iter",
    "stop_reason",
    "wall_time_s",
    "error",
)


def _cell_str(val) -> str:
    if val is None:
        return ""
    if isinstance(val, float):
        return "%.17g" % val
    return str(val)


def write_report(report: BenchmarkReport, base_path: str) -> tuple[str, str]:
    """Write the report as CSV and JSON next to each other.

    ``base_path`` may carry a .csv or .json extension; both files are
    produced either way and their paths returned.
    """
    root, ext = os.path.splitext(base_path)
    if ext.lower() not in (".csv", ".json"):
        root = base_path
    csv_path, json_path = root + ".csv", root + ".json"
    try:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("# meta " + json.dumps(report.meta, sort_keys=True) + "\n")
            for agg in report.aggregates:
                fh.write("# aggregate " + json.dumps(agg, sort_keys=True) + "\n")
            fh.write(",".join(ROW_COLUMNS) + "\n")
            for row in report.rows:
                d = row.to_dict()
                fh.write(",".join(_cell_str(d[c]) for c in ROW_COLUMNS) + "\n")
        payload = {
            "meta": report.meta,
            "aggregates": report.aggregates,
            "rows": [r.to_dict() for r in report.rows],
        }
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write report {base_path!r}: {exc}") from exc
    return csv_path, json_path
