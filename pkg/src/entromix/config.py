"""Flat key=value experiment configuration with a closed schema.

The on-disk format is one ``key = value`` pair per line, ``#`` comments,
and blank lines.  Every key has a documented default; a key outside the
schema is an error, because a silently ignored typo can corrupt a whole
ablation table.  The canonical serialization (sorted keys, one per line)
is what gets embedded in checkpoints and hashed into run metadata.
"""

from __future__ import annotations

import hashlib

from .data import ShiftSpec, SynthSpec
from .errors import ConfigError
from .model import ModelConfig
from .multiscale import MultiScaleConfig

__all__ = ["SCHEMA", "ExperimentConfig", "parse_config_text", "DEFAULT_CONFIG_TEXT"]


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int(raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc


def _parse_float(raw: str) -> float:
    try:
        return float(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc


def _parse_str(raw: str) -> str:
    return raw.strip()


def _parse_ints(raw: str) -> tuple[int, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"expected a comma-separated integer list, got {raw!r}")
    return tuple(_parse_int(s) for s in items)


def _parse_floats(raw: str) -> tuple[float, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"expected a comma-separated number list, got {raw!r}")
    return tuple(_parse_float(s) for s in items)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default, documentation)
SCHEMA: dict[str, tuple] = {
    "model.channels": (_parse_int, 8, "input channels per trial"),
    "model.time_len": (_parse_int, 128, "samples per trial"),
    "model.patch_len": (_parse_int, 16, "samples per token patch"),
    "model.d_model": (_parse_int, 64, "embedding width"),
    "model.n_layers": (_parse_int, 8, "encoder depth"),
    "model.n_heads": (_parse_int, 4, "attention heads"),
    "model.n_classes": (_parse_int, 10, "output classes"),
    "model.dropout": (_parse_float, 0.1, "dropout rate inside encoder blocks"),
    "mdm.enabled": (_parse_bool, True, "multi-scale mixing front-end on/off"),
    "mdm.levels": (_parse_int, 4, "pyramid depth including the input level"),
    "mdm.pool_kernel": (_parse_int, 2, "average-pooling factor between levels"),
    "mdm.rank": (_parse_int, 16, "bottleneck width of the level mixers"),
    "sd.enabled": (_parse_bool, True, "self-distillation auxiliary heads on/off"),
    "sd.weight": (_parse_float, 0.1, "weight of the self-distillation term"),
    "sd.temperature": (_parse_float, 4.0, "distillation softmax temperature"),
    "tent.enabled": (_parse_bool, True, "test-time entropy adaptation on/off"),
    "tent.lr": (_parse_float, 1e-3, "adaptation learning rate"),
    "tent.momentum": (_parse_float, 0.9, "adaptation SGD momentum"),
    "tent.steps": (_parse_int, 1, "gradient steps per unlabeled batch"),
    "tent.mode": (_parse_str, "online", "online carries parameters; episodic resets per batch"),
    "tent.batch_size": (_parse_int, 32, "stream batch size"),
    "optim.lr": (_parse_float, 1e-3, "training learning rate"),
    "optim.weight_decay": (_parse_float, 1e-2, "decoupled weight decay"),
    "optim.epochs": (_parse_int, 30, "training epochs"),
    "optim.batch_size": (_parse_int, 32, "training batch size"),
    "data.path": (_parse_str, "", "trial file to load; empty means synthesize"),
    "data.n_trials": (_parse_int, 1000, "synthetic dataset size"),
    "data.noise_sd": (_parse_float, 0.5, "synthetic within-class noise level"),
    "data.seed": (_parse_int, 0, "synthetic generator seed"),
    "data.train_frac": (_parse_float, 0.8, "train split fraction"),
    "data.val_frac": (_parse_float, 0.1, "validation split fraction"),
    "data.test_frac": (_parse_float, 0.1, "test split fraction"),
    "shift.gain": (_parse_floats, (1.5,), "per-channel gain (scalar or C values)"),
    "shift.offset": (_parse_floats, (0.0,), "per-channel baseline offset"),
    "shift.noise_sd": (_parse_float, 0.5, "extra noise added by the shift"),
    "shift.schedule": (_parse_str, "none", "shift schedule: none | abrupt | ramp"),
    "shift.change_at": (_parse_int, 0, "batch index where an abrupt shift begins"),
    "seeds": (_parse_ints, (0, 1, 2, 3, 4, 5), "seeds for multi-seed commands"),
}

_TENT_MODES = ("online", "episodic")


def parse_config_text(text: str) -> dict:
    """Parse key=value lines into a raw value mapping (defaults filled in)."""
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(raw_value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    for key, (_, default, _) in SCHEMA.items():
        values.setdefault(key, default)
    return values


class ExperimentConfig:
    """A fully resolved experiment configuration."""

    def __init__(self, values: dict | None = None) -> None:
        values = dict(values or {})
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self._values = {key: values.get(key, SCHEMA[key][1]) for key in SCHEMA}
        if self._values["tent.mode"] not in _TENT_MODES:
            raise ConfigError(
                f"tent.mode must be one of {_TENT_MODES}, got {self._values['tent.mode']!r}"
            )
        fracs = (
            self._values["data.train_frac"],
            self._values["data.val_frac"],
            self._values["data.test_frac"],
        )
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {fracs}")
        if not self._values["seeds"]:
            raise ConfigError("seeds list must not be empty")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def get(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def replace(self, **overrides) -> "ExperimentConfig":
        """A copy with dotted keys overridden (underscores map to dots)."""
        values = dict(self._values)
        for name, value in overrides.items():
            key = name.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
        return ExperimentConfig(values)

    def to_text(self) -> str:
        """Canonical serialization: sorted keys, one per line."""
        return "\n".join(f"{key} = {_fmt(self._values[key])}" for key in sorted(SCHEMA)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def __repr__(self) -> str:
        return f"ExperimentConfig(hash={self.config_hash()})"

    # -- builders -----------------------------------------------------------

    def model_config(self) -> ModelConfig:
        mixer = None
        if self.get("mdm.enabled"):
            mixer = MultiScaleConfig(
                levels=self.get("mdm.levels"),
                pool_kernel=self.get("mdm.pool_kernel"),
                rank=self.get("mdm.rank"),
            )
        return ModelConfig(
            channels=self.get("model.channels"),
            time_len=self.get("model.time_len"),
            patch_len=self.get("model.patch_len"),
            d_model=self.get("model.d_model"),
            n_layers=self.get("model.n_layers"),
            n_heads=self.get("model.n_heads"),
            n_classes=self.get("model.n_classes"),
            mixer=mixer,
            sd_enabled=self.get("sd.enabled"),
            dropout=self.get("model.dropout"),
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            n_classes=self.get("model.n_classes"),
            channels=self.get("model.channels"),
            time_len=self.get("model.time_len"),
            noise_sd=self.get("data.noise_sd"),
            seed=self.get("data.seed"),
        )

    def shift_spec(self) -> ShiftSpec:
        gain = self.get("shift.gain")
        offset = self.get("shift.offset")
        channels = self.get("model.channels")
        for name, vals in (("shift.gain", gain), ("shift.offset", offset)):
            if len(vals) not in (1, channels):
                raise ConfigError(
                    f"{name} must have 1 or {channels} values, got {len(vals)}"
                )
        return ShiftSpec(
            gain=gain[0] if len(gain) == 1 else gain,
            offset=offset[0] if len(offset) == 1 else offset,
            noise_sd=self.get("shift.noise_sd"),
            schedule=self.get("shift.schedule"),
            change_at=self.get("shift.change_at"),
        )

    def split_fractions(self) -> tuple[float, float, float]:
        return (
            self.get("data.train_frac"),
            self.get("data.val_frac"),
            self.get("data.test_frac"),
        )

    def seeds(self) -> tuple[int, ...]:
        return self.get("seeds")


def _default_text_with_docs() -> str:
    lines = ["# Experiment configuration — every key shown with its default."]
    for key in sorted(SCHEMA):
        parser, default, doc = SCHEMA[key]
        lines.append(f"{key} = {_fmt(default)}  # {doc}")
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG_TEXT = _default_text_with_docs()
