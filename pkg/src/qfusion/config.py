"""Run configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "hybrid"
    seed: int = 0
    data: Optional[str] = None
    out: Optional[str] = None
    # optimizer
    lr: float = 0.001
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # schedule
    max_lr: float = 0.002
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    # loop
    batch_size: int = 16
    max_epochs: int = 80
    patience: int = 25
    clip_norm: float = 1.0
    label_smoothing: float = 0.1
    # evaluation
    positive_class: str = "benign"
    swap_labels: bool = False

    def __post_init__(self):
        if self.model not in ("hybrid", "classical"):
            raise ConfigError(f"model must be hybrid or classical, got {self.model!r}")
        if self.positive_class not in ("benign", "malignant"):
            raise ConfigError(f"positive_class must be benign or malignant, got {self.positive_class!r}")
        for name in ("lr", "max_lr", "clip_norm", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not 0 < self.pct_start < 1:
            raise ConfigError("pct_start must be in (0, 1)")

    @property
    def positive_id(self) -> int:
        return 1 if self.positive_class == "benign" else 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **clean)


def _coerce(field_type, raw: str, key: str):
    t = field_type if isinstance(field_type, str) else getattr(field_type, "__name__", str(field_type))
    try:
        if "bool" in t:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {t}") from None
    return None if raw.lower() in ("none", "") else raw


def parse_config_text(text: str) -> dict[str, Any]:
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(types[key], raw, key)
    return out


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (``None`` means unset)."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
