"""Model/run configuration with named presets and a flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

MODES = ("predcls", "sgcls", "sgdet")
STRATEGIES = ("with", "semi", "no")
FRAME_ENCODINGS = ("learned", "sinusoidal", "none")
PAIR_POLICIES = ("person", "full")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    preset: str = "desk"
    # transformer
    d_model: int = 128
    n_heads: int = 4
    enc_layers: int = 1
    dec_layers: int = 3
    ffn_dim: int = 256
    dropout: float = 0.1
    window: int = 2
    stride: int = 1
    frame_encoding: str = "learned"
    reencode_every_layer: bool = True
    # relationship representation
    visual_dim: int = 64
    compress_dim: int = 32
    semantic_dim: int = 16
    union_channels: int = 8
    union_size: int = 3
    mask_grid: int = 27
    fbox_kernels: tuple[int, ...] = (7, 3)
    fbox_strides: tuple[int, ...] = (4, 2)
    fbox_paddings: tuple[int, ...] = (3, 0)
    # object classifier
    obj_hidden: int = 64
    pos_hidden: int = 16
    pos_dim: int = 16
    bn_momentum: float = 0.1
    # vocabulary (object classes include the person class, excluding background)
    n_object_classes: int = 6
    n_attention: int = 2
    n_spatial: int = 3
    n_contact: int = 4
    person_class: int = 0
    # graph generation / evaluation
    semi_threshold: float = 0.9
    ks: tuple[int, ...] = (10, 20, 50)
    nms_iou: float = 0.4
    match_iou: float = 0.5
    min_box_edge: float = 16.0
    mode: str = "predcls"
    pair_policy: str = "person"
    # optimisation
    lr: float = 1e-3
    clip_norm: float = 5.0
    weight_decay: float = 0.01
    steps: int = 2000
    seed: int = 0
    precision: int = 32
    checkpoint_every: int = 100
    log_level: str = "info"
    allow_paper_training: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.type.startswith("tuple"):
                setattr(self, f.name, tuple(getattr(self, f.name)))

    @property
    def n_predicates(self) -> int:
        return self.n_attention + self.n_spatial + self.n_contact

    @property
    def type_sizes(self) -> tuple[int, int, int]:
        return (self.n_attention, self.n_spatial, self.n_contact)

    @property
    def concat_dim(self) -> int:
        return 3 * self.compress_dim + 2 * self.semantic_dim

    def fbox_output_size(self) -> int:
        size = self.mask_grid
        for k, s, p in zip(self.fbox_kernels, self.fbox_strides, self.fbox_paddings):
            size = (size + 2 * p - k) // s + 1
        return size

    def validate(self) -> "ModelConfig":
        errs = []
        if self.d_model != self.concat_dim:
            errs.append(
                f"d_model={self.d_model} but relationship concat is 3*{self.compress_dim}+2*{self.semantic_dim}"
                f"={self.concat_dim}"
            )
        if self.n_heads < 1 or self.d_model % self.n_heads:
            errs.append(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.window < 1:
            errs.append("window must be >= 1")
        if not 1 <= self.stride <= self.window:
            errs.append("stride must lie in [1, window] so every frame is covered")
        if self.enc_layers < 0 or self.dec_layers < 0:
            errs.append("layer counts must be >= 0")
        if self.frame_encoding not in FRAME_ENCODINGS:
            errs.append(f"frame_encoding must be one of {FRAME_ENCODINGS}")
        if not 0.0 < self.semi_threshold < 1.0:
            errs.append("semi_threshold must lie in (0, 1)")
        if not self.ks or any(k < 1 for k in self.ks):
            errs.append("every K must be >= 1")
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}")
        if self.pair_policy not in PAIR_POLICIES:
            errs.append(f"pair_policy must be one of {PAIR_POLICIES}")
        if not 0.0 <= self.dropout < 1.0:
            errs.append("dropout must lie in [0, 1)")
        if self.precision not in (32, 64):
            errs.append("precision must be 32 or 64")
        if not (len(self.fbox_kernels) == len(self.fbox_strides) == len(self.fbox_paddings)) or not self.fbox_kernels:
            errs.append("fbox_kernels/strides/paddings must have equal, nonzero length")
        elif self.fbox_output_size() != self.union_size:
            errs.append(f"box-mask conv stack yields {self.fbox_output_size()}, union map is {self.union_size}")
        if min(self.type_sizes) < 1 or self.n_object_classes < 2:
            errs.append("vocabulary sizes must be positive (at least 2 object classes)")
        if not 0 <= self.person_class < self.n_object_classes:
            errs.append("person_class out of range")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


PAPER = dict(
    preset="paper",
    d_model=1936,
    n_heads=8,
    enc_layers=1,
    dec_layers=3,
    ffn_dim=2048,
    dropout=0.1,
    window=2,
    stride=1,
    visual_dim=2048,
    compress_dim=512,
    semantic_dim=200,
    union_channels=256,
    union_size=7,
    fbox_kernels=(7, 3),
    fbox_strides=(2, 2),
    fbox_paddings=(3, 1),
    obj_hidden=1024,
    pos_hidden=32,
    pos_dim=128,
    n_object_classes=36,
    n_attention=3,
    n_spatial=6,
    n_contact=17,
    lr=1e-5,
    clip_norm=5.0,
    semi_threshold=0.9,
)

DESK = dict(preset="desk")

# Smallest useful dims; used for gradient checks.
TINY = dict(
    preset="tiny",
    d_model=16,
    n_heads=2,
    ffn_dim=24,
    visual_dim=8,
    compress_dim=4,
    semantic_dim=2,
    union_channels=2,
    union_size=2,
    fbox_kernels=(7, 3),
    fbox_strides=(4, 3),
    fbox_paddings=(3, 0),
    obj_hidden=8,
    pos_hidden=4,
    pos_dim=4,
    n_object_classes=4,
    n_attention=2,
    n_spatial=2,
    n_contact=3,
)

PRESETS = {"paper": PAPER, "desk": DESK, "tiny": TINY}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides}).validate()


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ModelConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    t = types[name]
    raw = raw.strip()
    try:
        if t.startswith("tuple"):
            return tuple(int(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip())
        if t == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value if key == "preset" else _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ModelConfig:
    """Resolve preset -> file values -> overrides, then validate."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = overrides.pop("preset", None) or values.pop("preset", "desk")
    values.pop("preset", None)
    return preset(name, **{**values, **overrides})


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
