"""Run configuration: model hyperparameters and the INI-style run file.

A run file has five flat sections (data, autoencoder, model, train, eval).
Every key has a typed default below; unknown sections or keys are rejected
and serialization is canonical, so a config round-trips losslessly and
hashes stably.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

VARIANTS = ("far", "par", "nar")
POSENC_VARIANTS = ("abs2d", "rpe2d", "none")
CROSS_MODES = ("temporal", "fsta")


@dataclass
class ModelConfig:
    """Architecture hyperparameters for one predictor variant."""

    variant: str = "far"
    past_frames: int = 4
    future_frames: int = 4
    layers: int = 4          # fully-autoregressive stack depth
    enc_layers: int = 2      # encoder depth (par/nar)
    dec_layers: int = 2      # decoder depth (par/nar)
    d_model: int = 64
    heads: int = 8
    window: int = 4
    feat_size: int = 8       # Hf = Wf after the frame encoder
    posenc: str = "abs2d"
    pre_norm: bool = True
    cross_attention: str = "temporal"
    memory_posenc: bool = True
    seed: int = 2

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.posenc not in POSENC_VARIANTS:
            raise ConfigError(f"posenc must be one of {POSENC_VARIANTS}, got {self.posenc!r}")
        if self.cross_attention not in CROSS_MODES:
            raise ConfigError(f"cross_attention must be one of {CROSS_MODES}")
        if self.past_frames < 1 or self.future_frames < 1:
            raise ConfigError("past_frames and future_frames must be >= 1")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.feat_size % self.window != 0:
            raise ConfigError(f"window {self.window} does not divide feat_size {self.feat_size}")
        for name in ("layers", "enc_layers", "dec_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self


def desk_model_config(variant: str = "far", **overrides) -> ModelConfig:
    """Desk-scale defaults: small widths, equal 4-layer budget per variant."""
    return ModelConfig(variant=variant, **overrides).validate()


def paper_model_config(variant: str = "far", **overrides) -> ModelConfig:
    """Published-scale profile (d_model 528, 12 or 4+8 layers, 10 -> 10 frames)."""
    base = dict(
        variant=variant,
        past_frames=10,
        future_frames=10,
        layers=12,
        enc_layers=4,
        dec_layers=8,
        d_model=528,
        heads=8,
        window=4,
        feat_size=8,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()


@dataclass
class DataSection:
    seed: int = 0
    train_clips: int = 2000
    val_clips: int = 200
    test_clips: int = 200
    clip_length: int = 8
    canvas: int = 64
    shapes_per_clip: int = 2
    side_min: int = 8
    side_max: int = 12
    speed_min: int = 1
    speed_max: int = 3
    value_range: str = "unit"


@dataclass
class AutoencoderSection:
    d_model: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda1: float = 0.0   # adversarial weight, fixed at 0
    gdl_alpha: float = 1.0
    epochs: int = 6
    batch_frames: int = 64
    frames_per_epoch: int = 8000  # 0 = use every frame each epoch
    target_mse: float = 5e-3
    flip_augment: bool = True
    seed: int = 1


@dataclass
class ModelSection:
    variant: str = "far"
    past_frames: int = 4
    future_frames: int = 4
    layers: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    heads: int = 8
    window: int = 4
    feat_size: int = 8
    posenc: str = "abs2d"
    pre_norm: bool = True
    cross_attention: str = "temporal"
    memory_posenc: bool = True
    seed: int = 2


@dataclass
class TrainSection:
    lr: float = 1e-4
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    lambda2: float = 0.1
    gdl_alpha: float = 1.0
    epochs: int = 6
    batch_clips: int = 16
    flip_augment: bool = False
    seed: int = 3


@dataclass
class EvalSection:
    batch_clips: int = 32
    psnr_cap: float = 100.0


_SECTIONS = (
    ("data", DataSection),
    ("autoencoder", AutoencoderSection),
    ("model", ModelSection),
    ("train", TrainSection),
    ("eval", EvalSection),
)


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def model_config(self, variant: str | None = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            variant=variant or m.variant,
            past_frames=m.past_frames,
            future_frames=m.future_frames,
            layers=m.layers,
            enc_layers=m.enc_layers,
            dec_layers=m.dec_layers,
            d_model=m.d_model,
            heads=m.heads,
            window=m.window,
            feat_size=m.feat_size,
            posenc=m.posenc,
            pre_norm=m.pre_norm,
            cross_attention=m.cross_attention,
            memory_posenc=m.memory_posenc,
            seed=m.seed,
        ).validate()

    def validate(self) -> "RunConfig":
        d = self.data
        if d.value_range not in ("unit", "signed"):
            raise ConfigError(f"value_range must be unit or signed, got {d.value_range!r}")
        if d.clip_length < 2:
            raise ConfigError("clip_length must be >= 2")
        if d.side_min > d.side_max or d.side_min < 1:
            raise ConfigError("invalid shape side range")
        if d.speed_min > d.speed_max or d.speed_min < 0:
            raise ConfigError("invalid speed range")
        if d.side_max > d.canvas:
            raise ConfigError(f"shape side {d.side_max} larger than canvas {d.canvas}")
        if self.autoencoder.lambda1 != 0.0:
            raise ConfigError("lambda1 (adversarial weight) is fixed at 0 in this build")
        if self.autoencoder.gdl_alpha < 1.0 or self.train.gdl_alpha < 1.0:
            raise ConfigError("gdl_alpha must be >= 1")
        if self.train.lambda2 < 0.0:
            raise ConfigError("lambda2 must be >= 0")
        mc = self.model_config()
        if self.model.past_frames + self.model.future_frames > self.data.clip_length:
            raise ConfigError(
                f"past + future frames ({mc.past_frames}+{mc.future_frames}) exceed "
                f"clip_length {self.data.clip_length}"
            )
        if self.model.d_model != self.autoencoder.d_model:
            raise ConfigError(
                f"model d_model {self.model.d_model} must match autoencoder "
                f"d_model {self.autoencoder.d_model} (features feed the predictor directly)"
            )
        if self.model.feat_size != 8:
            raise ConfigError("the frame autoencoder produces 8x8 features; feat_size must be 8")
        return self


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {target_type.__name__} from {raw!r}") from exc


def config_to_text(cfg: RunConfig) -> str:
    """Canonical INI serialization: fixed section and key order."""
    out = io.StringIO()
    for section_name, section_type in _SECTIONS:
        section = getattr(cfg, section_name)
        out.write(f"[{section_name}]\n")
        for f in fields(section_type):
            out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def config_from_text(text: str) -> RunConfig:
    """Parse an INI run file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = dict(_SECTIONS)
    for section_name in parser.sections():
        if section_name not in known:
            raise ConfigError(f"unknown config section [{section_name}]")
    cfg = RunConfig()
    for section_name, section_type in _SECTIONS:
        if not parser.has_section(section_name):
            continue
        section = getattr(cfg, section_name)
        types = {f.name: f.type for f in fields(section_type)}
        defaults = {f.name: getattr(section, f.name) for f in fields(section_type)}
        for key, raw in parser.items(section_name):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
            setattr(section, key, _parse_value(raw, type(defaults[key])))
    return cfg.validate()


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text())


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def config_hash(cfg: RunConfig) -> str:
    """Stable hash of the canonical serialization."""
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()
