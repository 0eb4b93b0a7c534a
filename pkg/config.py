"""
Run configuration: dataclass defaults, then a TOML file, then CTXEMB_* environment variables
(read through python-dotenv), then command-line flags. Later layers win.
"""

from __future__ import annotations

import logging
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv

from core import ContextEmbError
from encoder import EncoderConfig
from loss import LossConfig
from POOLING_MODES import PoolingMode
from SCORERS import Scorer
from trainer import TrainConfig

LOG = logging.getLogger(__name__)

ENV_PREFIX = "CTXEMB_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
BM25_MODE = "bm25"


class ConfigError(ContextEmbError, ValueError):
    module = "config"


@dataclass(frozen=True)
class EvalSettings:
    k: int = 10
    mode: str = PoolingMode.LATE_CHUNK.value
    window_tokens: Optional[int] = None
    overlap_chunks: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.mode != BM25_MODE and not PoolingMode.has_value(self.mode):
            raise ConfigError(f"mode must be one of {PoolingMode.get_all_values() + [BM25_MODE]}, got {self.mode!r}")
        if self.window_tokens is not None and self.window_tokens < 2:
            raise ConfigError(f"window_tokens must be >= 2, got {self.window_tokens}")
        if self.overlap_chunks < 0:
            raise ConfigError(f"overlap_chunks must be >= 0, got {self.overlap_chunks}")


@dataclass(frozen=True)
class RunSettings:
    seed: Optional[int] = None
    threads: int = 0
    log_level: str = "INFO"

    def __post_init__(self):
        object.__setattr__(self, "log_level", str(self.log_level).upper())
        if self.log_level not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}, got {self.log_level!r}")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0 (0 = auto), got {self.threads}")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    paths: Dict[str, str] = field(default_factory=dict)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def seed(self) -> Optional[int]:
        return self.run.seed

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "paths": dict(sorted(self.paths.items())),
            "encoder": self.encoder.to_dict(),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
            "run": asdict(self.run),
        }


def _keys(cls) -> set:
    return {f.name for f in fields(cls)}


SECTION_KEYS = {
    "encoder": _keys(EncoderConfig),
    "train": _keys(TrainConfig) - {"loss"},
    "loss": _keys(LossConfig),
    "eval": _keys(EvalSettings),
    "run": _keys(RunSettings),
}


def read_toml(path) -> Dict[str, Dict[str, Any]]:
    """Sections of a TOML run config; unknown sections or keys are rejected."""
    try:
        with open(path, "rb") as file:
            data = tomllib.load(file)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML ({e})") from e

    for section, values in data.items():
        if section not in SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        unknown = sorted(set(values) - SECTION_KEYS[section])
        if unknown:
            raise ConfigError(f"{path}: unknown key {unknown[0]!r} in [{section}]")
    return data


def _env_int(environ: Mapping[str, str], name: str) -> Optional[int]:
    raw = environ.get(ENV_PREFIX + name)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"{ENV_PREFIX}{name} must be an integer, got {raw!r}") from e


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """[run] overrides from CTXEMB_SEED, CTXEMB_THREADS and CTXEMB_LOG_LEVEL."""
    if environ is None:
        load_dotenv(override=False)
        environ = os.environ
    values: Dict[str, Any] = {}
    seed = _env_int(environ, "SEED")
    if seed is not None:
        values["seed"] = seed
    threads = _env_int(environ, "THREADS")
    if threads is not None:
        values["threads"] = threads
    level = environ.get(ENV_PREFIX + "LOG_LEVEL")
    if level:
        values["log_level"] = level
    return values


def _merge(*layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for layer in layers:
        if layer:
            merged.update({k: v for k, v in layer.items() if v is not None})
    return merged


def resolve(subcommand: str, paths: Optional[Mapping[str, Any]] = None, config_path=None,
            flags: Optional[Mapping[str, Mapping[str, Any]]] = None,
            environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Build the fully resolved RunConfig.

    `flags` maps section names to command-line values; None values mean "not given". A resolved
    global seed also seeds the encoder initialization and the batch shuffling.
    """
    file_values = read_toml(config_path) if config_path is not None else {}
    flags = flags or {}
    unknown = sorted(set(flags) - set(SECTION_KEYS))
    if unknown:
        raise ConfigError(f"unknown flag section {unknown[0]!r}")

    def section(name: str, *extra: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
        return _merge(file_values.get(name), *extra, flags.get(name))

    try:
        run = RunSettings(**section("run", env_overrides(environ)))
        encoder_values = section("encoder")
        train_values = section("train")
        loss_values = section("loss")
        if run.seed is not None:
            encoder_values["seed"] = run.seed
            train_values["seed"] = run.seed

        encoder = EncoderConfig(**encoder_values)
        pooling = PoolingMode.get(train_values.get("pooling", TrainConfig.pooling))
        loss_values.setdefault("scorer", Scorer.for_mode(pooling).value)
        train = TrainConfig(**{**train_values, "loss": LossConfig(**loss_values)})
        eval_settings = EvalSettings(**section("eval"))
    except ConfigError:
        raise
    except (ContextEmbError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e

    resolved_paths = {k: str(Path(v)) for k, v in (paths or {}).items() if v is not None}
    config = RunConfig(subcommand, resolved_paths, encoder, train, eval_settings, run)
    LOG.debug("Resolved configuration: %s", config.to_dict())
    return config
