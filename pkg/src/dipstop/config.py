"""Flat key=value config files, value parsing, and flag merging.

Config keys mirror the CLI flags one-to-one (dashes become underscores).
Values given on the command line override values from the file, and the
merged "effective" configuration is echoed into traces and reports.
"""

from __future__ import annotations

from .errors import ConfigError
from .network import ArchSpec
from .optimizer import RunConfig


def parse_fraction(text: str) -> float:
    """Parse a float or an 'N/D' literal such as 25/255."""
    text = str(text).strip()
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse numeric value {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(str(text).strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer {text!r}") from exc


def _parse_int_list(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError("empty integer list")
    return tuple(_parse_int(p) for p in parts)


def _parse_str(text: str) -> str:
    return str(text).strip()


# every config key, its parser, and its default (None means "unset")
CONFIG_SCHEMA: dict[str, tuple] = {
    "objective": (_parse_str, "ste"),
    "noise": (_parse_str, "gaussian"),
    "sigma": (parse_fraction, None),
    "zeta": (parse_fraction, None),
    "b": (parse_fraction, None),
    "eps": (parse_fraction, 1e-3),
    "lr": (parse_fraction, 0.1),
    "max_iters": (_parse_int, 5000),
    "ema_beta": (parse_fraction, 0.99),
    "stop_window": (_parse_int, 1),
    "seed": (_parse_int, 0),
    "baseline_input": (_parse_str, "fixed_noise"),
    "depth": (_parse_int, None),
    "channels": (_parse_int_list, None),
    "skip_channels": (_parse_int_list, None),
    "activation": (_parse_str, "leaky_relu"),
    "upsample": (_parse_str, "bilinear"),
    "norm": (_parse_str, "batch"),
    "bits": (_parse_int, 8),
}


def parse_config_file(path: str) -> dict:
    """Read a flat key=value file; '#' starts a comment, blanks ignored."""
    values: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        parser = CONFIG_SCHEMA[key][0]
        values[key] = parser(val)
    return values


def effective_config(file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    """Merge defaults, config-file values, and flag overrides, in that order."""
    merged = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    for source in (file_values or {}), (flag_values or {}):
        for key, val in source.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if val is None:
                continue
            parser = CONFIG_SCHEMA[key][0]
            merged[key] = parser(val) if isinstance(val, str) else val
    return merged


def arch_from_config(cfg: dict) -> ArchSpec:
    """Build an ArchSpec from an effective config dict.

    Depth defaults to the length of the channel list when only one of the
    two is given; skip widths default to 4 per level.
    """
    channels = cfg.get("channels")
    depth = cfg.get("depth")
    if channels is None:
        channels = (32, 64, 64, 128) if depth is None else tuple([32] * depth)
    if depth is None:
        depth = len(channels)
    skips = cfg.get("skip_channels")
    if skips is None:
        skips = tuple([4] * depth)
    return ArchSpec(
        depth=depth,
        channels=tuple(channels),
        skip_channels=tuple(skips),
        activation=cfg.get("activation", "leaky_relu"),
        upsample=cfg.get("upsample", "bilinear"),
        norm=cfg.get("norm", "batch"),
    )


def run_config_from(cfg: dict) -> RunConfig:
    """Build a RunConfig from an effective config dict."""
    return RunConfig(
        objective=cfg["objective"],
        sigma=cfg["sigma"] if cfg["sigma"] is not None else 0.0,
        b=cfg["b"],
        zeta=cfg["zeta"] if cfg["zeta"] is not None else 0.0,
        eps=cfg["eps"],
        lr=cfg["lr"],
        max_iters=cfg["max_iters"],
        ema_beta=cfg["ema_beta"],
        stop_window=cfg["stop_window"],
        seed=cfg["seed"],
        baseline_input=cfg["baseline_input"],
    )
