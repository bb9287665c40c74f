"""Command-line interface: denoise, bench, and curves subcommands."""

from __future__ import annotations

import argparse
import glob
import json
import sys
from typing import Optional

from .bench import directory_corpus, phantom_corpus, run_bench, write_report
from .config import (
    arch_from_config,
    effective_config,
    parse_config_file,
    parse_fraction,
    run_config_from,
)
from .diagnostics import build_bundle, crossing_report, export_curves
from .errors import CapabilityError, ConfigError, DipstopError, IOFailureError, NonFiniteLossError
from .image import Image
from .io import read_image, write_image
from .metrics import psnr
from .network import init_network
from .optimizer import RunConfig, optimize, read_trace, write_trace_csv, write_trace_ndjson

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_PARTIAL = 5

GAUSSIAN_OBJECTIVES = ("dip", "dip_sure", "ste")
POISSON_OBJECTIVES = ("dip", "pure")


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--seed", type=int, help="optimization seed (default 0)")
    p.add_argument("--sigma", help="Gaussian noise level, float or N/255 literal")
    p.add_argument("--zeta", help="Poisson noise scale")
    p.add_argument("--b", help="upper bound of the input perturbation level (default sigma)")
    p.add_argument("--eps", help="finite-difference step of the Poisson objective")
    p.add_argument("--lr", help="learning rate (default 0.1)")
    p.add_argument("--max-iters", type=int, dest="max_iters", help="iteration cap (default 5000)")
    p.add_argument("--ema-beta", dest="ema_beta", help="output averaging factor (default 0.99)")
    p.add_argument(
        "--stop-window", type=int, dest="stop_window", help="loss window for the stop rule"
    )
    p.add_argument(
        "--baseline-input",
        dest="baseline_input",
        choices=("noisy_image", "fixed_noise"),
        help="network input for the dip objective",
    )
    p.add_argument("--depth", type=int, help="encoder depth")
    p.add_argument("--channels", help="comma-separated channel widths per level")
    p.add_argument("--skip-channels", dest="skip_channels", help="comma-separated skip widths")
    p.add_argument("--activation", choices=("leaky_relu", "relu"))
    p.add_argument("--upsample", choices=("bilinear", "nearest"))
    p.add_argument("--norm", choices=("batch", "none"))
    p.add_argument("--bits", type=int, choices=(8, 16), help="output bit depth (default 8)")


_SHARED_KEYS = (
    "seed",
    "sigma",
    "zeta",
    "b",
    "eps",
    "lr",
    "max_iters",
    "ema_beta",
    "stop_window",
    "baseline_input",
    "depth",
    "channels",
    "skip_channels",
    "activation",
    "upsample",
    "norm",
    "bits",
)


def _effective_from_args(args: argparse.Namespace, extra: Optional[dict] = None) -> dict:
    file_values = parse_config_file(args.config) if args.config else {}
    flag_values = {k: getattr(args, k, None) for k in _SHARED_KEYS}
    if extra:
        flag_values.update(extra)
    return effective_config(file_values, flag_values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dipstop",
        description="Single-image denoising with unbiased risk estimates and automatic stopping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="denoise one image")
    d.add_argument("--input", required=True, help="noisy input image (PNG/PGM/PPM)")
    d.add_argument("--output", required=True, help="denoised output path")
    d.add_argument("--noise", required=True, choices=("gaussian", "poisson"))
    d.add_argument(
        "--objective", required=True, choices=("dip", "dip_sure", "ste", "pure")
    )
    d.add_argument("--gt", help="optional clean reference; adds psnr/df diagnostics")
    d.add_argument("--trace", help="optional trace output (.ndjson or .csv)")
    _add_shared_flags(d)

    b = sub.add_parser("bench", help="run a method x image x noise x seed grid")
    b.add_argument("--corpus", required=True, help="'phantoms' or 'dir:PATH'")
    b.add_argument("--sigmas", help="comma-separated Gaussian levels (floats or N/255)")
    b.add_argument("--zetas", help="comma-separated Poisson scales")
    b.add_argument("--methods", required=True, help="comma-separated objectives")
    b.add_argument("--seeds", required=True, help="comma-separated seeds")
    b.add_argument("--report", required=True, help="report base path (.csv/.json written)")
    b.add_argument("--threads", type=int, help="worker pool width (capped by DIPSTOP_THREADS)")
    _add_shared_flags(b)

    c = sub.add_parser("curves", help="export aligned diagnostic curves from traces")
    c.add_argument("--traces", required=True, help="glob of trace files")
    c.add_argument("--out", required=True, help="output file")
    c.add_argument("--format", default="csv", choices=("csv", "svg-plot"))
    return parser


def _fail(code: int, message: str) -> int:
    print(f"dipstop: error: {message}", file=sys.stderr)
    return code


def cmd_denoise(args: argparse.Namespace) -> int:
    try:
        cfg_map = _effective_from_args(args, {"objective": args.objective, "noise": args.noise})
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))

    if args.noise == "gaussian":
        if args.zeta is not None:
            return _fail(EXIT_USAGE, "--zeta applies to poisson noise only")
        if cfg_map["sigma"] is None:
            return _fail(EXIT_USAGE, "gaussian noise requires --sigma")
        if args.objective not in GAUSSIAN_OBJECTIVES:
            return _fail(EXIT_USAGE, f"objective {args.objective} requires poisson noise")
    else:
        if args.sigma is not None:
            return _fail(EXIT_USAGE, "--sigma applies to gaussian noise only")
        if cfg_map["zeta"] is None:
            return _fail(EXIT_USAGE, "poisson noise requires --zeta")
        if args.objective not in POISSON_OBJECTIVES:
            return _fail(EXIT_USAGE, f"objective {args.objective} requires gaussian noise")

    try:
        y = read_image(args.input)
        x = read_image(args.gt) if args.gt else None
    except IOFailureError as exc:
        return _fail(EXIT_IO, str(exc))

    try:
        run_cfg = run_config_from(cfg_map)
        arch = arch_from_config(cfg_map)
        net = init_network(arch, y.channels, run_cfg.seed)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))

    print(json.dumps({"effective_config": cfg_map}, sort_keys=True, default=list))
    trace = None
    try:
        result = optimize(net, y, run_cfg, x_opt=x)
        trace = result.trace
    except NonFiniteLossError as exc:
        if args.trace and exc.trace is not None:
            _write_trace(exc.trace, args.trace)
        return _fail(EXIT_NONFINITE, str(exc))

    try:
        write_image(result.output_ema.clipped(), args.output, bits=cfg_map["bits"])
        if args.trace:
            _write_trace(trace, args.trace)
    except (IOFailureError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))

    summary = {
        "stop_iter": trace.stop_iter,
        "stop_reason": trace.stop_reason,
        "iterations": len(trace.records),
    }
    if x is not None:
        summary["psnr_ema"] = psnr(x, result.output_ema, clip=True)
        summary["psnr_last"] = psnr(x, result.output_last, clip=True)
        if result.peak_psnr is not None:
            summary["psnr_peak"] = result.peak_psnr
            summary["peak_iter"] = result.peak_iter
    print(json.dumps({"summary": summary}, sort_keys=True))
    return EXIT_OK


def _write_trace(trace, path: str) -> None:
    if path.lower().endswith(".csv"):
        write_trace_csv(trace, path)
    else:
        write_trace_ndjson(trace, path)


def _parse_levels(text: Optional[str]) -> list[float]:
    if not text:
        return []
    return [parse_fraction(p) for p in text.split(",") if p.strip()]


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        cfg_map = _effective_from_args(args)
        sigmas = _parse_levels(args.sigmas)
        zetas = _parse_levels(args.zetas)
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    if not methods or not seeds:
        return _fail(EXIT_USAGE, "--methods and --seeds must be non-empty")
    if bool(sigmas) == bool(zetas):
        return _fail(EXIT_USAGE, "give exactly one of --sigmas or --zetas")
    for m in methods:
        if m not in (GAUSSIAN_OBJECTIVES if sigmas else POISSON_OBJECTIVES):
            return _fail(EXIT_USAGE, f"method {m!r} is invalid for this noise model")

    try:
        if args.corpus == "phantoms":
            corpus = phantom_corpus()
        elif args.corpus.startswith("dir:"):
            corpus = directory_corpus(args.corpus[4:])
        else:
            return _fail(EXIT_USAGE, "--corpus must be 'phantoms' or 'dir:PATH'")
    except IOFailureError as exc:
        return _fail(EXIT_IO, str(exc))

    noise_kind = "gaussian" if sigmas else "poisson"
    levels = sigmas or zetas
    run_keys = RunConfig.__dataclass_fields__
    base_cfg = {k: v for k, v in cfg_map.items() if k in run_keys}
    try:
        report = run_bench(
            corpus,
            noise_kind,
            levels,
            methods,
            seeds,
            base_cfg,
            arch_from_config(cfg_map),
            threads=args.threads,
        )
        report.meta["effective_config"] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg_map.items()
        }
        csv_path, json_path = write_report(report, args.report)
    except (DipstopError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))
    print(json.dumps({"report_csv": csv_path, "report_json": json_path,
                      "rows": len(report.rows), "failed": len(report.failed_rows)}))
    if report.failed_rows:
        for row in report.failed_rows:
            print(f"dipstop: row failed: {row.image_id}/{row.method}/seed {row.seed}: {row.error}",
                  file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_curves(args: argparse.Namespace) -> int:
    paths = sorted(glob.glob(args.traces))
    if not paths:
        return _fail(EXIT_USAGE, f"no traces match {args.traces!r}")
    try:
        traces = [read_trace(p) for p in paths]
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, f"cannot parse traces: {exc}")
    bundle = build_bundle(traces)
    try:
        report = crossing_report(bundle)
    except CapabilityError:
        report = None
    try:
        export_curves(bundle, args.out, format=args.format, crossing=report)
    except IOFailureError as exc:
        return _fail(EXIT_IO, str(exc))
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "denoise":
        return cmd_denoise(args)
    if args.command == "bench":
        return cmd_bench(args)
    return cmd_curves(args)


if __name__ == "__main__":
    raise SystemExit(main())
