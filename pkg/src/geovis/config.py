"""Run configuration, presets and hashing.

Every knob is addressable by a dotted key (``fusion.variant``), which is
what the CLI exposes as ``--fusion.variant=d``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError

__all__ = [
    "RunConfig",
    "DataConfig",
    "ModelConfig",
    "AblationConfig",
    "FusionConfig",
    "IegConfig",
    "HeadConfig",
    "GumbelConfig",
    "OptimConfig",
    "TrainConfig",
    "PRESETS",
    "make_config",
]


@dataclass
class DataConfig:
    root: Optional[str] = None
    object_count_cap: Optional[int] = None
    stride: int = 1


@dataclass
class ModelConfig:
    architecture: str = "bottom_up"
    c1: int = 128
    c2: int = 256
    c3: int = 512
    hidden: Optional[int] = None
    heads: int = 1
    leaky_slope: float = 0.2
    include_self_in_sum: bool = True
    gat_version: str = "v1"
    temporal_mode: str = "channel"
    # filled in from the dataset manifest
    n_keypoints: Optional[int] = None
    visual_dim: Optional[int] = None
    max_humans: Optional[int] = None
    max_objects: Optional[int] = None
    n_sub_activities: Optional[int] = None
    n_affordances: Optional[int] = None

    @property
    def hidden_size(self) -> int:
        return self.hidden if self.hidden is not None else self.c3 // 2

    @property
    def max_entities(self) -> int:
        return int(self.max_humans or 0) + int(self.max_objects or 0)


@dataclass
class AblationConfig:
    use_gat: bool = True
    use_caf: bool = True
    use_ieg: bool = True


@dataclass
class FusionConfig:
    variant: str = "d"
    gap_mode: str = "time"
    reduction: int = 16


@dataclass
class IegConfig:
    lam: float = 0.5
    zero_neighbor_context: bool = False
    gap_mode: str = "channel"
    attn_axis: str = "key"


@dataclass
class HeadConfig:
    boundary_mode: str = "concat"


@dataclass
class GumbelConfig:
    temperature: float = 1.0
    anneal_rate: float = 1e-4
    min_temperature: float = 0.1
    hard: bool = False

    def temperature_at(self, step: int) -> float:
        import math

        return max(self.min_temperature, self.temperature * math.exp(-self.anneal_rate * step))


@dataclass
class OptimConfig:
    name: str = "adamw"
    lr: float = 1e-4
    batch: int = 16
    weight_decay: float = 0.01


@dataclass
class TrainConfig:
    stage1_steps: int = 1000
    stage2_steps: int = 1000
    seed: int = 0
    log_every: int = 50
    eval_every: int = 500


@dataclass
class RunConfig:
    dataset: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ieg: IegConfig = field(default_factory=IegConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for section, values in d.items():
            for key, value in values.items():
                cfg.set(f"{section}.{key}", value)
        return cfg

    def copy(self) -> "RunConfig":
        return RunConfig.from_dict(self.to_dict())

    def set(self, dotted: str, value: Any) -> None:
        try:
            section, key = dotted.split(".")
        except ValueError:
            raise ConfigError(f"config key must look like section.key: {dotted!r}") from None
        sub = getattr(self, section, None)
        if sub is None or not dataclasses.is_dataclass(sub):
            raise ConfigError(f"unknown config section {section!r}")
        names = {f.name: f for f in dataclasses.fields(sub)}
        if key not in names:
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(sub, key, _coerce(value, names[key].type, dotted))

    def hash(self) -> str:
        """Short stable digest; the data root is excluded so runs can move."""
        d = self.to_dict()
        d["dataset"] = {k: v for k, v in d["dataset"].items() if k != "root"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def tag(self) -> str:
        a = self.ablation
        parts = ["GAT" if a.use_gat else "GCN", "CAF" if a.use_caf else "noCAF", "IEG" if a.use_ieg else "noIEG"]
        if a.use_caf:
            parts.append(f"fusion-{self.fusion.variant}")
        return "_".join(parts)

    def validate(self) -> None:
        m = self.model
        if m.architecture not in ("bottom_up", "top_down"):
            raise ConfigError(f"unknown model.architecture {m.architecture!r}")
        if m.gat_version not in ("v1", "v2"):
            raise ConfigError(f"unknown model.gat_version {m.gat_version!r}")
        if m.temporal_mode not in ("channel", "depthwise3"):
            raise ConfigError(f"unknown model.temporal_mode {m.temporal_mode!r}")
        if m.c1 % m.heads:
            raise ConfigError("model.c1 must be divisible by model.heads")
        if self.fusion.variant not in ("a", "b", "c", "d"):
            raise ConfigError(f"unknown fusion variant {self.fusion.variant!r}")
        if self.fusion.gap_mode not in ("time", "time_entity"):
            raise ConfigError(f"unknown fusion.gap_mode {self.fusion.gap_mode!r}")
        if self.ieg.gap_mode not in ("channel", "passthrough"):
            raise ConfigError(f"unknown ieg.gap_mode {self.ieg.gap_mode!r}")
        if self.ieg.attn_axis not in ("key", "query"):
            raise ConfigError(f"unknown ieg.attn_axis {self.ieg.attn_axis!r}")
        if not 0.0 <= self.ieg.lam <= 1.0:
            raise ConfigError("ieg.lam must lie in [0, 1]")
        if self.head.boundary_mode not in ("concat", "none"):
            raise ConfigError(f"unknown head.boundary_mode {self.head.boundary_mode!r}")
        if self.gumbel.temperature <= 0 or self.gumbel.min_temperature <= 0:
            raise ConfigError("gumbel temperatures must be positive")
        if self.optim.name != "adamw":
            raise ConfigError("only the adamw optimizer is supported")
        if self.dataset.stride < 1:
            raise ConfigError("dataset.stride must be >= 1")


def _coerce(value: Any, annotation: Any, key: str) -> Any:
    ann = str(annotation)
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if "Optional" in ann:
            return None
        raise ConfigError(f"{key} may not be None")
    try:
        if "bool" in ann:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if "int" in ann:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if "float" in ann:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


PRESETS: dict[str, dict[str, Any]] = {
    # full-size dimensions and schedule (the dataclass defaults)
    "reference": {},
    "bimanual": {"model.c2": 32, "model.c3": 64, "ieg.zero_neighbor_context": True},
    # desk-scale settings used for synthetic experiments on one CPU core
    "desk": {
        "model.c1": 16,
        "model.c2": 32,
        "model.c3": 64,
        "optim.lr": 3e-3,
        "optim.weight_decay": 1e-4,
        "gumbel.anneal_rate": 1e-3,
        "train.stage1_steps": 1000,
        "train.stage2_steps": 1000,
    },
}


def make_config(preset: str = "reference", overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig()
    for k, v in {**PRESETS[preset], **(overrides or {})}.items():
        cfg.set(k, v)
    cfg.validate()
    return cfg
