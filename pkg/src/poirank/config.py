"""Run configuration: a flat key=value file, overridable by environment
variables (prefix POIRANK_, upper-cased key) and then by command-line
flags. The effective configuration is echoed next to every artifact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .model import ModelConfig
from .training import TrainConfig

ENV_PREFIX = "POIRANK_"


class RunConfigError(ValueError):
    """Bad key, value, or missing referenced path."""


@dataclass
class RunConfig:
    # paths
    data: str = ""
    cache: str = "cache.txt"
    out_dir: str = "out"
    # reproducibility
    seed: int = 0
    # model
    dim: int = 64
    heads: int = 8
    layers: int = 2
    hist_len: int = 100
    dropout: float = 0.1
    history_attn: bool = True
    temporal_bias: bool = True
    spatial_bias: bool = True
    # training
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    k_negatives: int = 99
    label_smoothing: float = 0.0
    w_explore: float = 1.0
    patience: int = 5
    weight_decay: float = 0.01
    val_pool_size: int = 100
    # evaluation pools
    pool: str = "sampled"
    pool_size: int = 100
    # synthetic generation
    synth_users: int = 40
    synth_pois: int = 120
    synth_length: int = 70
    synth_zones: int = 6

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, num_heads=self.heads, num_blocks=self.layers,
            hist_len=self.hist_len, dropout=self.dropout,
            use_history_self_attn=self.history_attn,
            use_temporal_bias=self.temporal_bias,
            use_spatial_bias=self.spatial_bias)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, max_epochs=self.epochs,
            k_negatives=self.k_negatives, label_smoothing=self.label_smoothing,
            w_explore=self.w_explore, seed=self.seed, patience=self.patience,
            weight_decay=self.weight_decay, val_pool_size=self.val_pool_size)


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind: type, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise RunConfigError(f"bad value for {name!r}: {raw!r} (expected {kind.__name__})") from None


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise RunConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def load_run_config(config_path: str | None = None,
                    overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults < config file < environment < explicit overrides."""
    schema = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    cfg = RunConfig()
    def apply(name: str, raw_or_value, already_typed: bool) -> None:
        if name not in schema:
            raise RunConfigError(f"unknown config key {name!r}")
        kind = kinds[schema[name]] if isinstance(schema[name], str) else schema[name]
        value = raw_or_value if already_typed else _coerce(name, kind, raw_or_value)
        setattr(cfg, name, value)

    if config_path:
        if not os.path.exists(config_path):
            raise RunConfigError(f"config file not found: {config_path}")
        for key, value in parse_config_file(config_path).items():
            apply(key, value, already_typed=False)
    for name in schema:
        env_val = os.environ.get(ENV_PREFIX + name.upper())
        if env_val is not None:
            apply(name, env_val, already_typed=False)
    for name, value in (overrides or {}).items():
        if value is not None:
            apply(name, value, already_typed=True)
    return cfg


def echo_config(cfg: RunConfig, path: str) -> None:
    """Write the fully-resolved configuration for reproducibility."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# effective poirank configuration\n")
        for field in fields(RunConfig):
            value = getattr(cfg, field.name)
            if isinstance(value, bool):
                value = int(value)
            f.write(f"{field.name}={value}\n")
