"""Line-oriented `key = value` configuration with '#' comments.

Every field can be overridden per call (the CLI forwards its flags here);
unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ParseError, UsageError
from .waic import TrainConfig


@dataclass(frozen=True)
class HarnessConfig:
    seed: int = 20200614
    # data generation
    n_rows: int = 55000
    camera: str = "spectrocam8"
    illuminant: str = "xenon"
    noise_sigma: float = 0.002
    train_ratio: float = 10.0 / 11.0
    # superset carving
    support_quantile: float = 0.80
    cluster_quantile: float = 0.90
    train_fraction: float = 0.49
    # flow training
    members: int = 5
    n_blocks: int = 10
    hidden_width: int = 64
    clamp_alpha: float = 2.0
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    jitter_sigma: float = 1e-4
    # which split tag cmd_train learns from ('auto': tr_s, else train, else all)
    train_tag: str = "auto"
    # scene-change experiment
    frames: int = 200
    switch_frame: int = 80
    image_size: int = 32
    roi_lo: int = 8
    roi_hi: int = 24
    scene_rows: int = 20000
    # ensemble-size sweep
    sweep_members: int = 20
    sweep_rows: int = 55000
    # bitwise-reproducible serial execution (the only mode implemented)
    serial: bool = True

    def train_config(self) -> TrainConfig:
        return TrainConfig(n_blocks=self.n_blocks, hidden_width=self.hidden_width,
                           clamp_alpha=self.clamp_alpha, epochs=self.epochs,
                           batch_size=self.batch_size, learning_rate=self.learning_rate,
                           jitter_sigma=self.jitter_sigma)

    def content_hash(self) -> str:
        text = ",".join(f"{f.name}={getattr(self, f.name)!r}"
                        for f in fields(HarnessConfig))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(HarnessConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as err:
        raise UsageError(f"config key '{key}': {err}") from err


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key = value lines into typed overrides."""
    overrides: dict = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"{source}: line {ln}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{source}: line {ln}: unknown config key '{key}'")
        overrides[key] = _coerce(key, raw)
    return overrides


def load_config(path: str | None = None, **overrides) -> HarnessConfig:
    """Defaults, then the config file, then keyword overrides (CLI flags)."""
    merged: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                merged.update(parse_config_text(fh.read(), source=path))
        except OSError as err:
            raise UsageError(f"cannot read config file: {err}") from err
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key '{key}'")
        merged[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    return replace(HarnessConfig(), **merged)
