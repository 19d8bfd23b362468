"""Line-oriented ``key = value`` run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    frames: int = 96
    channels: int = 64
    merge_channels: int = 128
    depth: int = 2
    merge_blocks: int = 2
    kernel_size: int = 3
    num_bases: int = 16
    sparse_k: int = 3
    sparse_sigma: float = 0.01
    dropout: float = 0.3
    norm: bool = False
    cond: str = "merge"
    # synthetic corpus
    count: int = 8
    seq_frames: int = 200
    fps: float = 50.0
    actions: list = field(default_factory=lambda: ["gait", "reach"])
    noise_px: float = 0.0
    amp_max: float = 0.25
    # training
    epochs: int = 110
    batch_size: int = 256
    lr: float = 5e-3
    milestones: list = field(default_factory=lambda: [80, 90, 100])
    motion_weight: float = 0.1
    weight_decay: float = 1e-5
    val_fraction: float = 0.2
    window_stride: int = 0        # 0 means non-overlapping training windows
    # ablation
    seeds: int = 5
    variants: list = field(default_factory=lambda: ["off", "merge"])

    def model_kwargs(self) -> dict:
        keys = ("frames", "channels", "merge_channels", "depth", "merge_blocks", "kernel_size",
                "num_bases", "sparse_k", "sparse_sigma", "dropout", "norm", "cond")
        return {k: getattr(self, k) for k in keys}


def _scalar(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce(key: str, raw: str, default):
    value = _scalar(raw)  # bare words are strings
    if isinstance(default, bool):
        if isinstance(value, str) and value.lower() in ("true", "false"):
            value = value.lower() == "true"
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
        value = float(value)
    elif isinstance(default, list):
        if isinstance(value, str):
            value = [_scalar(v.strip()) for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {raw!r}")
    elif not isinstance(value, str):
        value = raw
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Blank lines and ``#`` comments are ignored; unknown keys are rejected."""
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
        except ConfigError as exc:
            raise ConfigError(f"{source}: line {lineno}: {exc}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))
