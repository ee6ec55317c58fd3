"""Scenario and training configuration, INI file loading, validation."""

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass
class SystemConfig:
    """Scenario constants for the downlink simulator.

    Angles are degrees relative to array broadside; power is linear watts;
    noise_var is the total complex noise variance (split equally between the
    real and imaginary parts).
    """

    num_antennas: int = 16
    num_users: int = 4
    max_order: int = 3          # highest bits-per-symbol B
    rate_req: int = 8           # total bits per channel use R
    power_budget: float = 1.0
    noise_var: float | None = None            # derived from SNR when None
    snr_range_db: tuple[float, float] = (0.0, 20.0)
    user_center_angles: tuple[float, ...] = (-30.0, -15.0, 15.0, 30.0)
    angle_spread_deg: float = 10.0
    # Feed channel amplitude as a second input plane to the precoder CNN
    # (the phase-fusion plane alone discards amplitude).
    precoder_uses_amplitude: bool = True

    def validate(self) -> None:
        if self.num_antennas < 1:
            raise ConfigError("num_antennas must be >= 1")
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.max_order < 1:
            raise ConfigError("max_order must be >= 1")
        if not (self.num_users * self.max_order >= self.rate_req >= self.num_users):
            raise ConfigError(
                "need K*B >= rate_req >= K, got "
                f"K={self.num_users}, B={self.max_order}, R={self.rate_req}"
            )
        if self.power_budget <= 0:
            raise ConfigError("power_budget must be positive")
        if self.noise_var is not None and self.noise_var <= 0:
            raise ConfigError("noise_var must be positive when given")
        if len(self.snr_range_db) != 2 or self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigError("snr_range_db must be a nonempty (lo, hi) interval")
        if len(self.user_center_angles) != self.num_users:
            raise ConfigError("user_center_angles must have one entry per user")
        if self.angle_spread_deg < 0:
            raise ConfigError("angle_spread_deg must be nonnegative")


@dataclass
class TrainConfig:
    """Hyperparameters for the three-stage training pipeline."""

    minibatch: int = 1000
    lr_init: float = 0.001
    # Fine-tuning restarts from a converged stage-1 model; None reuses
    # lr_init, small values preserve the pretrained solution when the
    # stage-2 step budget is too short to re-converge from a large step.
    lr_init_stage2: float | None = None
    lr_decay: float = 0.1
    lr_period: int = 50
    epochs_stage1: int = 100
    epochs_stage2: int = 100
    epochs_stage3: int = 50
    # Classifier stage decay period; None reuses lr_period. With few
    # optimizer steps per epoch the classifier needs the initial rate held
    # longer than the precoder stages do.
    lr_period_stage3: int | None = None
    draws_per_channel: int = 5
    snr_range_db: tuple[float, float] = (0.0, 20.0)
    train_size: int = 100_000
    test_size: int = 10_000
    val_size: int = 10_000
    # Fresh (message, SNR, noise) draws per (channel, order combo) when
    # scoring combos for classifier labels.
    label_eval_draws: int = 64
    dropout_rate: float = 0.5
    seed: int = 0
    deterministic: bool = False

    def validate(self) -> None:
        for name in ("minibatch", "lr_period", "epochs_stage1", "epochs_stage2",
                     "epochs_stage3", "draws_per_channel", "train_size",
                     "test_size", "val_size", "label_eval_draws"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_init <= 0 or not (0 < self.lr_decay <= 1):
            raise ConfigError("lr_init must be > 0 and lr_decay in (0, 1]")
        if self.lr_init_stage2 is not None and self.lr_init_stage2 <= 0:
            raise ConfigError("lr_init_stage2 must be positive when given")
        if self.lr_period_stage3 is not None and self.lr_period_stage3 <= 0:
            raise ConfigError("lr_period_stage3 must be positive when given")
        if not (0 <= self.dropout_rate < 1):
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigError("snr_range_db must be a (lo, hi) interval")


def full_scale() -> tuple[SystemConfig, TrainConfig]:
    """Full-scale configuration (128 antennas, 1.2e5 channels, 250 epochs)."""
    return SystemConfig(num_antennas=128), TrainConfig()


def desk_scale() -> tuple[SystemConfig, TrainConfig]:
    """Downscaled configuration that trains in minutes on a laptop CPU."""
    sys_cfg = SystemConfig(num_antennas=16)
    train_cfg = TrainConfig(
        epochs_stage1=40,
        epochs_stage2=20,
        lr_init_stage2=1e-6,
        epochs_stage3=120,
        lr_period=20,
        lr_period_stage3=60,
        draws_per_channel=2,
        train_size=10_000,
        test_size=1_000,
        val_size=1_000,
        label_eval_draws=4,
    )
    return sys_cfg, train_cfg


_PRESETS = {"full": full_scale, "desk": desk_scale}

_TUPLE_FIELDS = {"snr_range_db", "user_center_angles"}

# optional keys that accept "none" and their coercions when set
_OPTIONAL_FIELDS = {"noise_var": float, "lr_init_stage2": float,
                    "lr_period_stage3": int}


def _parse_value(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool or raw.lower() in ("true", "false"):
        if raw.lower() not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if raw.lower() in ("none", ""):
        return None
    return json.loads(raw) if raw.startswith("[") else type_coerce(raw, target_type)


def type_coerce(raw: str, target_type):
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def _apply_section(obj, section: configparser.SectionProxy):
    hints = {f.name: f.type for f in dataclasses.fields(obj)}
    for key, raw in section.items():
        if key not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _TUPLE_FIELDS:
            value = tuple(float(v) for v in raw.replace(",", " ").split())
        elif key in _OPTIONAL_FIELDS:
            if raw.strip().lower() in ("none", ""):
                value = None
            else:
                value = _OPTIONAL_FIELDS[key](raw)
        elif isinstance(getattr(obj, key), bool):
            value = _parse_value(raw, bool)
        elif isinstance(getattr(obj, key), int):
            value = int(raw)
        elif isinstance(getattr(obj, key), float):
            value = float(raw)
        else:
            value = raw
        setattr(obj, key, value)


def load_config(path: str | os.PathLike) -> tuple[SystemConfig, TrainConfig]:
    """Load an INI config file with [system] and [train] sections.

    An optional ``preset`` key in [system] ("desk" or "full") selects the
    baseline values; explicit keys override the preset.
    """
    parser = configparser.ConfigParser()
    read = parser.read(os.fspath(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")

    preset = "desk"
    if parser.has_option("system", "preset"):
        preset = parser.get("system", "preset")
        parser.remove_option("system", "preset")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    sys_cfg, train_cfg = _PRESETS[preset]()

    if parser.has_section("system"):
        _apply_section(sys_cfg, parser["system"])
    if parser.has_section("train"):
        _apply_section(train_cfg, parser["train"])
    sys_cfg.validate()
    train_cfg.validate()
    return sys_cfg, train_cfg


def snapshot(sys_cfg: SystemConfig, train_cfg: TrainConfig) -> dict:
    """JSON-serializable snapshot of the fully resolved configuration."""
    return {
        "system": dataclasses.asdict(sys_cfg),
        "train": dataclasses.asdict(train_cfg),
    }
