"""Run configuration: defaults, keyed-text files, flag overrides and the config digest."""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, fields

from .errors import ConfigError, ParseError
from .keyedtext import format_keyed_text, parse_keyed_text
from .nets import ModelConfig
from .scoring import SCORE_MODES, training_mode

SEED_ENV = "HYPAD_SEED"

# where things are, not how the model is built or scored; excluded from the digest
PATH_KEYS = ("data", "labels", "out", "checkpoint")

# keys that change the trained model; a checkpoint is only usable with matching values
MODEL_KEYS = ("window", "channels", "latent_dim", "ball_dim", "encoder_hidden", "decoder_hidden", "critic_hidden",
              "head_scale", "train_head_matrix")


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    labels: str = ""
    out: str = "runs"
    checkpoint: str = ""
    mode: str = "hyperbolic_uncertainty"
    train_frac: float = 0.7
    window: int = 100
    stride: int = 1
    train_stride: int = 2
    channels: int = 1
    epochs: int = 30
    batch: int = 64
    lr: float = 5e-4
    critic_iters: int = 5
    latent_dim: int = 20
    ball_dim: int = 20
    encoder_hidden: int = 16
    decoder_hidden: int = 16
    critic_hidden: int = 100
    gp_weight: float = 10.0
    cycle_weight: float = 10.0
    head_scale: float = 0.3
    train_head_matrix: bool = False
    k: float = 3.0
    min_gap: int = 1
    aggregate: str = "median"
    seed: int = 0

    def __post_init__(self):
        training_mode(self.mode)
        positive = ("window", "stride", "train_stride", "channels", "batch", "critic_iters", "latent_dim", "ball_dim",
                    "encoder_hidden", "decoder_hidden", "critic_hidden")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "lr", "gp_weight", "cycle_weight", "k", "min_gap", "seed", "head_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac must lie in (0, 1)")
        if self.aggregate not in ("median", "mean"):
            raise ConfigError("aggregate must be 'median' or 'mean'")

    @property
    def training_mode(self) -> str:
        return training_mode(self.mode)

    def model_config(self) -> ModelConfig:
        return ModelConfig(window=self.window, channels=self.channels, latent_dim=self.latent_dim,
                           ball_dim=self.ball_dim, encoder_hidden=self.encoder_hidden,
                           decoder_hidden=self.decoder_hidden, critic_hidden=self.critic_hidden,
                           critic_iters=self.critic_iters, lr=self.lr, gp_weight=self.gp_weight,
                           cycle_weight=self.cycle_weight, head_scale=self.head_scale,
                           train_head_matrix=self.train_head_matrix)

    def to_text(self, paths: bool = True) -> str:
        return format_keyed_text({f.name: _fmt(getattr(self, f.name)) for f in fields(self)
                                  if paths or f.name not in PATH_KEYS})

    def digest(self) -> str:
        """sha256 of the settings text without the path keys (the value stored in checkpoints)."""
        return hashlib.sha256(self.to_text(paths=False).encode()).hexdigest()

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cast(name: str, raw):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(raw, str):
        return raw
    kind = kinds[name]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    try:
        items = parse_keyed_text(text)
    except ParseError as exc:
        raise ConfigError(str(exc)) from None
    return {k: _cast(k, v) for k, v in items.items()}


def resolve(file_text: str | None = None, flags: dict | None = None, env=None) -> RunConfig:
    """Defaults < config file < ``HYPAD_SEED`` < explicit flags.

    ``flags`` entries whose value is ``None`` are treated as not given.
    """
    env = os.environ if env is None else env
    values = {}
    if file_text:
        values.update(parse_config_text(file_text))
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _cast("seed", env[SEED_ENV].strip())
    for k, v in (flags or {}).items():
        if v is not None:
            values[k] = _cast(k, v)
    return RunConfig(**values)


def from_text(text: str) -> RunConfig:
    return RunConfig(**parse_config_text(text))


def check_compatible(stored: RunConfig, requested: RunConfig):
    """Raise ConfigError when a model-shaping key differs from the checkpoint's."""
    for key in MODEL_KEYS:
        a, b = getattr(stored, key), getattr(requested, key)
        if a != b:
            raise ConfigError(f"{key} = {b} does not match the checkpoint ({a})")
    if stored.training_mode != requested.training_mode:
        raise ConfigError(f"mode {requested.mode} needs a {requested.training_mode} checkpoint; "
                          f"this one was trained in {stored.training_mode} mode")


__all__ = ["RunConfig", "resolve", "from_text", "parse_config_text", "check_compatible", "SEED_ENV",
           "SCORE_MODES"]
