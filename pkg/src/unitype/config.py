"""Run configuration: diff-able INI files with CLI overrides.

A run config names the dataset registry, the oracle file, the model kind and
the output directory, plus the training and encoder settings. Every value
has a printable default; paths are resolved relative to the config file.
"""

from __future__ import annotations

from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .predictor import TrainingConfig

MODEL_KINDS = ("uhls", "silo", "multihead")


@dataclass
class RunConfig:
    registry: Path | None = None
    oracle: Path | None = None
    seed_hierarchy: Path | None = None
    hierarchy: Path | None = None
    model: str = "uhls"
    out: Path = Path("runs/out")
    seed: int = 13
    training: TrainingConfig = field(default_factory=TrainingConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config is missing required path {name!r}")
            if not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")

    def to_lines(self) -> list[str]:
        t, e = self.training, self.encoder
        return [
            "[run]",
            f"registry = {self.registry or ''}",
            f"oracle = {self.oracle or ''}",
            f"seed_hierarchy = {self.seed_hierarchy or ''}",
            f"hierarchy = {self.hierarchy or ''}",
            f"model = {self.model}",
            f"out = {self.out}",
            f"seed = {self.seed}",
            "",
            "[training]",
            f"learning_rate = {t.learning_rate!r}",
            f"epochs = {t.epochs}",
            f"batch_size = {t.batch_size}",
            f"patience = {t.patience}",
            f"beta = {t.beta!r}",
            "",
            "[encoder]",
            f"left_dim = {e.left_dim}",
            f"right_dim = {e.right_dim}",
            f"char_dim = {e.char_dim}",
            f"token_hash_bits = {e.token_hash_bits}",
            f"char_hash_bits = {e.char_hash_bits}",
            f"max_context = {'' if e.max_context is None else e.max_context}",
        ]


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except ConfigParserError as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from exc
    base = path.parent
    config = RunConfig()
    try:
        if parser.has_section("run"):
            run = parser["run"]
            for key in ("registry", "oracle", "seed_hierarchy", "hierarchy"):
                value = run.get(key, "").strip()
                if value:
                    setattr(config, key, base / value)
            config.model = run.get("model", config.model).strip() or config.model
            out = run.get("out", "").strip()
            if out:
                config.out = base / out
            config.seed = run.getint("seed", fallback=config.seed)
        if parser.has_section("training"):
            t = parser["training"]
            config.training = TrainingConfig(
                learning_rate=t.getfloat("learning_rate", fallback=config.training.learning_rate),
                epochs=t.getint("epochs", fallback=config.training.epochs),
                batch_size=t.getint("batch_size", fallback=config.training.batch_size),
                patience=t.getint("patience", fallback=config.training.patience),
                beta=t.getfloat("beta", fallback=config.training.beta),
                seed=config.seed,
            )
        if parser.has_section("encoder"):
            e = parser["encoder"]
            raw_context = e.get("max_context", fallback="").strip()
            config.encoder = EncoderConfig(
                left_dim=e.getint("left_dim", fallback=config.encoder.left_dim),
                right_dim=e.getint("right_dim", fallback=config.encoder.right_dim),
                char_dim=e.getint("char_dim", fallback=config.encoder.char_dim),
                token_hash_bits=e.getint("token_hash_bits", fallback=config.encoder.token_hash_bits),
                char_hash_bits=e.getint("char_hash_bits", fallback=config.encoder.char_hash_bits),
                max_context=int(raw_context) if raw_context else None,
                seed=config.seed,
            )
    except (ValueError, ConfigParserError) as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from exc
    if config.model not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {config.model!r}; expected one of {MODEL_KINDS}")
    return config


def apply_overrides(
    config: RunConfig,
    model: str | None = None,
    seed: int | None = None,
    out: str | None = None,
) -> RunConfig:
    if model is not None:
        if model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {model!r}; expected one of {MODEL_KINDS}")
        config.model = model
    if out is not None:
        config.out = Path(out)
    if seed is not None:
        config.seed = seed
        config.training = TrainingConfig(
            learning_rate=config.training.learning_rate,
            epochs=config.training.epochs,
            batch_size=config.training.batch_size,
            patience=config.training.patience,
            beta=config.training.beta,
            seed=seed,
        )
        e = config.encoder
        config.encoder = EncoderConfig(
            left_dim=e.left_dim, right_dim=e.right_dim, char_dim=e.char_dim,
            token_hash_bits=e.token_hash_bits, char_hash_bits=e.char_hash_bits,
            max_context=e.max_context, seed=seed,
        )
    return config
