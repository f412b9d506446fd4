"""Run configuration: defaults, YAML file loading, flag overrides and validation.

Precedence, lowest to highest: built-in defaults, the ``--fast`` profile,
values from the ``--config`` file, explicit command-line flags.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import yaml

from .engine import VARIANTS, VariantConfig, normalize_variant

OUT_ENV = "SSFDAF_OUT"

FAST_PROFILE = {
    "sample_rate": 8000,
    "n_fft": 256,
    "shift": 64,
    "rir_length": 2048,
    "rt60": 0.03,
    "delay": 8,
    "duration": 6.0,
    "change_time": 3.0,
    "train_seconds": 6.0,
    "frame_shift": 64,
}


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


@dataclass
class RunConfig:
    variants: list = field(default_factory=lambda: list(VARIANTS))
    sample_rate: int = 16000
    n_fft: int = 1536
    shift: int = 512
    a: float = 0.9999
    n_iter: int = 2  # L for the EM-ordered variants; ME variants always use 1
    mm_steps: int = 3
    k: int = 10
    lam: float = 0.5
    exact_error_power: bool = False
    snr_db: list = field(default_factory=lambda: [15.0])
    input: str = "synthetic"
    noise: str = "synthetic"
    rir: str = "synthetic"  # or "before.wav,after.wav"
    rir_length: int = 48000
    rt60: float = 0.25
    delay: int = 16
    duration: float = 20.0
    change_time: float | None = 10.0
    harmonics: int = 5
    floor_db: float = -20.0
    train_seconds: float = 25.0
    frame_shift: int = 512
    dict_iters: int = 200
    erle_smoothing: float = 0.98
    runs: int = 1
    seed: int = 0
    jobs: int = 1
    out: str | None = None
    fast: bool = False

    def variant_configs(self) -> list:
        out = []
        for name in self.variants:
            v = normalize_variant(name)
            out.append(
                VariantConfig(
                    variant=v,
                    n_iter=self.n_iter if v in ("EM", "NMF_EM") else 1,
                    mm_steps=self.mm_steps,
                    lam=self.lam,
                    a=self.a,
                    n_fft=self.n_fft,
                    shift=self.shift,
                    k=self.k,
                    exact_error_power=self.exact_error_power,
                )
            )
        return out

    def validate(self) -> "RunConfig":
        if not self.variants:
            raise ConfigError("variants: at least one variant is required")
        try:
            self.variants = [normalize_variant(v) for v in self.variants]
            for vc in self.variant_configs():
                vc.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate: must be positive")
        if self.duration <= 0:
            raise ConfigError("duration: must be positive")
        if self.change_time is not None and not 0 < self.change_time < self.duration:
            raise ConfigError("change_time: must lie inside the signal duration")
        if self.rir == "synthetic" and self.rir_length < self.n_fft - self.shift:
            raise ConfigError("rir_length: must be at least M - R taps")
        if self.rt60 <= 0:
            raise ConfigError("rt60: must be positive")
        if not 0.0 <= self.erle_smoothing < 1.0:
            raise ConfigError("erle_smoothing: must lie in [0, 1)")
        if self.runs < 1:
            raise ConfigError("runs: must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
        if not self.snr_db:
            raise ConfigError("snr_db: at least one SNR is required")
        if self.train_seconds * self.sample_rate < self.n_fft:
            raise ConfigError("train_seconds: shorter than one analysis frame")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in fields(RunConfig)}


def _coerce(name, value):
    default = getattr(RunConfig(), name)
    if name in ("variants",):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return list(value)
    if name == "snr_db":
        if isinstance(value, (int, float)):
            return [float(value)]
        if isinstance(value, str):
            return [float(v) for v in value.split(",") if v.strip()]
        return [float(v) for v in value]
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or name == "change_time":
        return float(value)
    return value


def build_config(file_path=None, overrides=None) -> RunConfig:
    """Merge defaults, fast profile, config file and overrides into a validated config."""
    values = {}
    if file_path is not None:
        with open(file_path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{file_path}: expected a mapping at top level")
        values.update(loaded)
    values.update(overrides or {})

    unknown = set(values) - _FIELDS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown configuration field")

    cfg = RunConfig()
    fast = bool(_coerce("fast", values.get("fast", False)))
    if fast:
        for k, v in FAST_PROFILE.items():
            setattr(cfg, k, v)
    for k, v in values.items():
        try:
            setattr(cfg, k, _coerce(k, v))
        except (TypeError, ValueError):
            raise ConfigError(f"{k}: cannot interpret {v!r}") from None
    if cfg.out is None:
        cfg.out = os.environ.get(OUT_ENV, "results")
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
