"""Run configuration: typed ``key = value`` settings with file and flag overrides."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


# key -> (type, default, help)
SCHEMA: dict[str, tuple[type, object, str]] = {
    # network
    "variant": (str, "FULL", "network variant: FULL, NPM, NCM, NCA, NL, NE, NEH"),
    "P": (int, 8, "patch size"),
    "D": (int, 64, "token width"),
    "heads": (int, 4, "attention heads"),
    "ffn_mult": (int, 2, "feed-forward expansion"),
    "prop_size": (int, 32, "propagation memory rows"),
    # training
    "lr": (float, 1e-3, "initial learning rate"),
    "epochs": (int, 50, "training epochs"),
    "steps": (int, 0, "stop after this many optimiser steps (0 = run all epochs)"),
    "batch": (int, 4, "sequences advanced in lockstep per step"),
    "decay": (float, 0.98, "per-epoch lr factor (0 = reach 1% of lr at the last epoch)"),
    "crop": (int, 0, "square random crop size (0 = full frame)"),
    "seq_len": (int, 4, "truncated backpropagation length in windows"),
    "scales": (int, 5, "gradient-matching scales"),
    "seed": (int, 7, "random seed for data generation and initialisation"),
    "log_every": (int, 50, "progress print interval in steps"),
    # data
    "data": (str, "", "dataset directory"),
    "eval_data": (str, "", "held-out dataset directory for eval"),
    "checkpoint": (str, "", "checkpoint path"),
    "sequence": (str, "", "sequence directory for infer"),
    "H": (int, 64, "frame height"),
    "W": (int, 64, "frame width"),
    "dt_us": (int, 50_000, "window length in microseconds"),
    "max_range": (float, 50.0, "maximum LiDAR range in meters"),
    "sequences": (int, 4, "sequences to generate"),
    "windows": (int, 40, "windows per generated sequence"),
    "lidar_period": (int, 1, "LiDAR frame every k-th window"),
    "lidar_rows": (int, 8, "LiDAR scan rows"),
    "phase": (float, 0.0, "camera time offset in windows for generated data"),
    "out": (str, "", "output directory"),
}


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    typ = SCHEMA[key][0]
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config_file(path) -> dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = parse_value(key.strip(), value.strip())
    return out


def build_config(file_path=None, overrides: dict[str, object] | None = None) -> dict[str, object]:
    """defaults < config file < explicit overrides."""
    cfg = {k: v[1] for k, v in SCHEMA.items()}
    if file_path:
        cfg.update(read_config_file(file_path))
    for k, v in (overrides or {}).items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        cfg[k] = SCHEMA[k][0](v)
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    return "".join(f"{k} = {_repr(cfg[k])}\n" for k in SCHEMA)


def _repr(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)
