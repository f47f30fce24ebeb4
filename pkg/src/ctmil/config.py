"""Run configuration: defaults, validation, and key=value config files.

Config files are flat ``key = value`` lines with ``#`` comments. Values
are coerced by the dataclass field type; pairs such as HU ranges are
written ``lo,hi``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Type, TypeVar

from .errors import ConfigError
from .nncore.models import ARCHS

MODES = ("transfer", "finetune")

T = TypeVar("T")


def parse_kv_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key] = value
    return values


def _coerce(name: str, text: str, target_type) -> object:
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if target_type is str:
            return text
        # remaining supported field type: pair of ints, written "lo,hi"
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise ValueError(text)
        return (int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"config field {name!r}: cannot parse {text!r}") from exc


def apply_mapping(instance: T, values: dict[str, str]) -> T:
    """Overlay string key=value pairs onto a dataclass instance."""
    fields = {f.name: f for f in dataclasses.fields(instance)}
    for key, text in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config field {key!r}")
        current = getattr(instance, key)
        target_type = type(current) if current is not None else str
        setattr(instance, key, _coerce(key, text, target_type))
    return instance


def load_dataclass(cls: Type[T], path: str | Path | None,
                   overrides: dict | None = None) -> T:
    instance = cls()
    if path is not None:
        apply_mapping(instance, parse_kv_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(instance, key, value)
    return instance


@dataclass
class RunConfig:
    """All pipeline hyperparameters with their defaults.

    The SSL block defaults to batch 256 / SGD lr 0.005 / weight decay
    1e-4 / momentum 0.9; the MIL block to Adam lr 1e-6 / weight decay
    1e-5 / betas 0.9, 0.999.
    """

    seed: int = 0
    encoder: str = "lenet5"
    embed_dim: int = 128
    attention_dim: int = 64
    mode: str = "transfer"

    ssl_epochs: int = 10
    ssl_batch_size: int = 256
    ssl_lr: float = 0.005
    ssl_weight_decay: float = 1e-4
    ssl_momentum: float = 0.9
    ssl_temperature: float = 0.2
    ssl_queue_size: int = 4096
    ssl_proj_dim: int = 64
    ssl_momentum_coef: float = 0.99
    ssl_rec_weight: float = 1.0

    mil_epochs: int = 50
    mil_lr: float = 1e-6
    mil_weight_decay: float = 1e-5
    mil_beta1: float = 0.9
    mil_beta2: float = 0.999

    sup_epochs: int = 2
    sup_batch_size: int = 256
    sup_lr: float = 1e-3

    compare_seeds: str = "0,1,2"

    def validate(self) -> None:
        def require(cond: bool, message: str) -> None:
            if not cond:
                raise ConfigError(message)

        require(self.encoder in ARCHS,
                f"encoder must be one of {ARCHS}, got {self.encoder!r}")
        require(self.mode in MODES,
                f"mode must be one of {MODES}, got {self.mode!r}")
        require(self.embed_dim > 0, f"embed_dim must be > 0, got {self.embed_dim}")
        require(self.attention_dim > 0,
                f"attention_dim must be > 0, got {self.attention_dim}")
        for name in ("ssl_lr", "mil_lr", "sup_lr", "ssl_temperature"):
            require(getattr(self, name) > 0,
                    f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("ssl_weight_decay", "mil_weight_decay", "ssl_rec_weight"):
            require(getattr(self, name) >= 0,
                    f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("ssl_momentum", "ssl_momentum_coef", "mil_beta1",
                     "mil_beta2"):
            require(0.0 <= getattr(self, name) < 1.0,
                    f"{name} must be in [0, 1), got {getattr(self, name)}")
        for name in ("ssl_epochs", "mil_epochs", "sup_epochs"):
            require(getattr(self, name) >= 0,
                    f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("ssl_batch_size", "sup_batch_size", "ssl_queue_size",
                     "ssl_proj_dim"):
            require(getattr(self, name) >= 1,
                    f"{name} must be >= 1, got {getattr(self, name)}")
        self.seeds_list()

    def seeds_list(self) -> list[int]:
        try:
            seeds = [int(s) for s in str(self.compare_seeds).split(",") if s.strip() != ""]
        except ValueError as exc:
            raise ConfigError(
                f"compare_seeds must be comma-separated integers, got "
                f"{self.compare_seeds!r}"
            ) from exc
        if not seeds:
            raise ConfigError("compare_seeds must name at least one seed")
        return seeds


def load_run_config(path: str | Path | None,
                    overrides: dict | None = None) -> RunConfig:
    cfg = load_dataclass(RunConfig, path, overrides)
    cfg.validate()
    return cfg
