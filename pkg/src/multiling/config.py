"""Flat ``key = value`` config files mapped onto the nested training dataclasses."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .objectives import LossWeights
from .optim import OptimConfig

KD_POSITIONS = ("all", "masked_only")
TEACHER_INPUTS = ("masked", "unmasked")
CORRUPTIONS = ("mask_only", "bert_80_10_10")


class ConfigFileError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    batch_size: int = 16
    max_seq_len: int = 32
    mask_prob: float = 0.15
    label_smoothing: float = 0.7
    temperature: float = 2.0
    kd_scale_t2: bool = False
    kd_positions: str = "all"
    teacher_input: str = "masked"
    mask_corruption: str = "mask_only"
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigFileError(f"mask_prob must lie in (0, 1), got {self.mask_prob}")
        if self.batch_size < 1:
            raise ConfigFileError("batch_size must be >= 1")
        if self.max_seq_len < 3:
            raise ConfigFileError("max_seq_len must leave room for [CLS], [SEP] and one token")
        if self.max_seq_len > self.model.max_positions:
            raise ConfigFileError(
                f"max_seq_len={self.max_seq_len} exceeds max_positions={self.model.max_positions}"
            )
        if self.kd_positions not in KD_POSITIONS:
            raise ConfigFileError(f"kd_positions must be one of {KD_POSITIONS}")
        if self.teacher_input not in TEACHER_INPUTS:
            raise ConfigFileError(f"teacher_input must be one of {TEACHER_INPUTS}")
        if self.mask_corruption not in CORRUPTIONS:
            raise ConfigFileError(f"mask_corruption must be one of {CORRUPTIONS}")
        if self.log_every < 1:
            raise ConfigFileError("log_every must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.optim.total_steps

    def to_flat(self) -> dict[str, object]:
        return to_flat(self)

    @classmethod
    def from_flat(cls, values: dict[str, object]) -> TrainConfig:
        return from_flat(values)


_NESTED = {"model": ModelConfig, "weights": LossWeights, "optim": OptimConfig}


def _owner_map() -> dict[str, tuple[str | None, dataclasses.Field]]:
    owners: dict[str, tuple[str | None, dataclasses.Field]] = {}
    for f in fields(TrainConfig):
        if f.name in _NESTED:
            for sub in fields(_NESTED[f.name]):
                owners[sub.name] = (f.name, sub)
        else:
            owners[f.name] = (None, f)
    return owners


def _type_of(cls, f: dataclasses.Field):
    return typing.get_type_hints(cls)[f.name]


def _coerce(raw, tp, key: str):
    if not isinstance(raw, str):
        return tuple(raw) if tp == tuple[str, ...] else raw
    text = raw.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp == tuple[str, ...]:
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return text
    except ValueError:
        raise ConfigFileError(f"bad value for {key}: {raw!r}") from None


def from_flat(values: dict[str, object]) -> TrainConfig:
    owners = _owner_map()
    nested: dict[str, dict] = {k: {} for k in _NESTED}
    top: dict[str, object] = {}
    for key, raw in values.items():
        if key not in owners:
            raise ConfigFileError(f"unknown config key {key!r}")
        owner, f = owners[key]
        cls = _NESTED[owner] if owner else TrainConfig
        value = _coerce(raw, _type_of(cls, f), key)
        (nested[owner] if owner else top)[key] = value
    try:
        for name, cls in _NESTED.items():
            top[name] = cls(**nested[name])
        return TrainConfig(**top)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from exc


def to_flat(cfg: TrainConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            for sub in fields(value):
                out[sub.name] = getattr(value, sub.name)
        else:
            out[f.name] = value
    return out


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_kv_file(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_kv_text(p.read_text(encoding="utf-8"), str(p))


def format_kv(values: dict[str, object]) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def apply_overrides(values: dict[str, object], overrides: list[str] | None) -> dict[str, object]:
    out = dict(values)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigFileError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_train_config(path: str | Path, overrides: list[str] | None = None) -> TrainConfig:
    return from_flat(apply_overrides(read_kv_file(path), overrides))
