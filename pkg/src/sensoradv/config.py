"""Declarative run configuration (TOML), validated before any work starts."""

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attacks.base import DEFAULT_PARAMS, STRATEGIES, AttackConfig
from .errors import ConfigError
from .models import MODEL_NAMES
from .signal_image import EncoderConfig
from .training import TrainConfig

_TOP_KEYS = {"seed", "out", "data", "encoder", "models", "train", "attacks"}
_DATA_KEYS = {"path", "format", "users", "gestures", "samples", "train_fraction"}
_ENCODER_KEYS = {"columns", "alphabet_size", "order"}
_MODEL_KEYS = {"names", "epochs"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "epochs", "beta1", "beta2", "eps"}
_ATTACK_KEYS = {"strategies", "samples_per_user", "bounds"} | set(STRATEGIES)


@dataclass(frozen=True)
class DataConfig:
    """Either a recordings file (``path``) or synthetic generator settings."""

    path: str | None = None
    format: str | None = None
    users: int = 10
    gestures: int = 60
    samples: int = 150
    train_fraction: float = 0.8

    @property
    def synthetic(self):
        return self.path is None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    models: tuple = MODEL_NAMES
    model_epochs: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: tuple = ()
    samples_per_user: int | None = None

    def epochs_for(self, name):
        return self.model_epochs.get(name, self.train.epochs)

    def train_config_for(self, name):
        cfg = self.train
        return TrainConfig(cfg.learning_rate, cfg.batch_size, self.epochs_for(name), cfg.beta1,
                           cfg.beta2, cfg.eps, seed=self.seed)

    def attack(self, strategy):
        for a in self.attacks:
            if a.strategy == strategy:
                return a
        raise KeyError(strategy)

    def to_dict(self):
        """Everything that influences numeric results; ``out`` is excluded."""
        d = self.data
        return {
            "seed": self.seed,
            "data": {"path": d.path, "format": d.format, "users": d.users, "gestures": d.gestures,
                     "samples": d.samples, "train_fraction": d.train_fraction},
            "encoder": {"columns": self.encoder.columns, "alphabet_size": self.encoder.alphabet_size,
                        "order": self.encoder.order},
            "models": list(self.models),
            "model_epochs": {m: self.epochs_for(m) for m in self.models},
            "train": {"learning_rate": self.train.learning_rate, "batch_size": self.train.batch_size,
                      "beta1": self.train.beta1, "beta2": self.train.beta2, "eps": self.train.eps},
            "attacks": [a.to_dict() for a in self.attacks],
            "samples_per_user": self.samples_per_user,
        }

    def hash(self, length=12):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:length]


def _table(raw, key, allowed, where):
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return value


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def from_dict(raw, base_dir="."):
    """Build and validate a :class:`RunConfig` from parsed TOML."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "seed" not in raw:
        raise ConfigError("seed is required")
    seed = _int(raw["seed"], "seed", 0)

    d = _table(raw, "data", _DATA_KEYS, "data")
    path = d.get("path")
    if path is not None:
        if not isinstance(path, str):
            raise ConfigError("data.path must be a string")
        path = os.path.normpath(os.path.join(base_dir, path))
        if not os.path.isfile(path):
            raise ConfigError(f"data.path does not exist: {path}")
    fmt = d.get("format")
    if fmt not in (None, "csv", "binary"):
        raise ConfigError(f"data.format must be csv or binary, got {fmt!r}")
    frac = _number(d.get("train_fraction", 0.8), "data.train_fraction")
    if not 0.0 < frac < 1.0:
        raise ConfigError("data.train_fraction must lie in (0, 1)")
    data = DataConfig(path, fmt, _int(d.get("users", 10), "data.users", 1),
                      _int(d.get("gestures", 60), "data.gestures", 2),
                      _int(d.get("samples", 150), "data.samples", 2), frac)

    e = _table(raw, "encoder", _ENCODER_KEYS, "encoder")
    encoder = EncoderConfig(_int(e.get("columns", 128), "encoder.columns", 1),
                            _int(e.get("alphabet_size", 6), "encoder.alphabet_size", 1),
                            _int(e.get("order", 2), "encoder.order", 1))
    if encoder.alphabet_size != 6:
        raise ConfigError("encoder.alphabet_size must equal the channel count (6)")

    m = _table(raw, "models", _MODEL_KEYS, "models")
    names = tuple(m.get("names", MODEL_NAMES))
    bad = [n for n in names if n not in MODEL_NAMES]
    if bad or not names or len(set(names)) != len(names):
        raise ConfigError(f"models.names must be distinct entries of {list(MODEL_NAMES)}, got {list(names)}")
    epochs = m.get("epochs", {})
    if not isinstance(epochs, dict) or set(epochs) - set(names):
        raise ConfigError("models.epochs must map configured model names to epoch counts")
    model_epochs = {k: _int(v, f"models.epochs.{k}", 0) for k, v in epochs.items()}

    t = _table(raw, "train", _TRAIN_KEYS, "train")
    try:
        train = TrainConfig(
            learning_rate=_number(t.get("learning_rate", 1e-3), "train.learning_rate"),
            batch_size=_int(t.get("batch_size", 32), "train.batch_size", 1),
            epochs=_int(t.get("epochs", 50), "train.epochs", 0),
            beta1=_number(t.get("beta1", 0.9), "train.beta1"),
            beta2=_number(t.get("beta2", 0.999), "train.beta2"),
            eps=_number(t.get("eps", 1e-8), "train.eps"),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None

    a = _table(raw, "attacks", _ATTACK_KEYS, "attacks")
    strategies = tuple(a.get("strategies", STRATEGIES))
    if not strategies or set(strategies) - set(STRATEGIES) or len(set(strategies)) != len(strategies):
        raise ConfigError(f"attacks.strategies must be distinct entries of {list(STRATEGIES)}")
    bounds = a.get("bounds", [0.0, 1.0])
    if not isinstance(bounds, list) or len(bounds) != 2:
        raise ConfigError("attacks.bounds must be [low, high]")
    bounds = (_number(bounds[0], "attacks.bounds"), _number(bounds[1], "attacks.bounds"))
    spu = a.get("samples_per_user")
    if spu is not None:
        spu = _int(spu, "attacks.samples_per_user", 1)
    attacks = []
    for s in strategies:
        params = a.get(s, {})
        if not isinstance(params, dict):
            raise ConfigError(f"[attacks.{s}] must be a table")
        unknown = set(params) - set(DEFAULT_PARAMS[s])
        if unknown:
            raise ConfigError(f"unknown keys in [attacks.{s}]: {sorted(unknown)}")
        try:
            attacks.append(AttackConfig(s, bounds, seed, dict(params)))
        except ValueError as exc:
            raise ConfigError(f"[attacks.{s}]: {exc}") from None

    out = raw.get("out", "runs")
    if not isinstance(out, str):
        raise ConfigError("out must be a string")
    out = os.path.normpath(os.path.join(base_dir, out))
    return RunConfig(seed, out, data, encoder, names, model_epochs, train, tuple(attacks), spu)


def load_config(path):
    """Parse and validate a TOML run configuration; relative paths resolve
    against the file's directory."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return from_dict(raw, os.path.dirname(os.path.abspath(path)))
