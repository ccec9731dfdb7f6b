"""Run configuration: defaults < config file < explicit overrides."""

from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

__all__ = ["RunConfig", "ConfigError", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # backbone
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_n: int = 24
    d_time: int = 64
    coord_harmonics: int = 4
    # training
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 10_000
    max_steps: int = 0  # 0 = no step cap
    grad_clip: float = 10.0
    ema_decay: float = 0.9999
    time_clip: float = 0.9
    w_atom: float = 0.5
    w_frac: float = 2.0
    w_len: float = 1.0
    w_ang: float = 1.0
    orbit_tol: float = 1e-3
    augment_translation: bool = True
    val_every: int = 50
    val_samples: int = 64
    val_steps: int = 100
    val_use_ema: bool = True
    seed: int = 0
    # sampling
    steps: int = 500
    num_samples: int = 1
    guidance: str = "auto"  # auto | on | off
    guidance_scale: float = 2.0
    noise_level: float = 0.1
    atg_guidance_mix: str = "logit"  # logit | rate
    # evaluation
    stol: float = 0.5
    ltol: float = 0.3
    angle_tol: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.time_clip <= 1.0:
            raise ConfigError("time_clip must lie in (0, 1]")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must lie in (0, 1]")
        if self.lr <= 0 or self.grad_clip <= 0 or self.batch_size < 1:
            raise ConfigError("lr, grad_clip and batch_size must be positive")
        if self.guidance not in ("auto", "on", "off"):
            raise ConfigError("guidance must be one of auto/on/off")
        if self.atg_guidance_mix not in ("logit", "rate"):
            raise ConfigError("atg_guidance_mix must be logit or rate")
        if self.guidance_scale < 0 or not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError("guidance_scale must be >= 0 and noise_level in [0, 1]")

    @property
    def loss_weights(self) -> dict[str, float]:
        return {"A": self.w_atom, "F": self.w_frac, "Ll": self.w_len, "La": self.w_ang}

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **overrides) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if value is None:
                continue
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            clean[key] = _coerce(known[key].type, value, key)
        return replace(self, **clean)


def _coerce(type_name, value, key):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key} ({kind})") from None


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def load_config(path=None, **overrides) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.updated(**parse_config_text(Path(path).read_text()))
    return cfg.updated(**overrides)
