"""One structured run config (JSON or YAML) covering data, model, losses, training and search."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .alphasearch import SearchConfig
from .augment import AugmentConfig
from .codebook import CodebookConfig, SinkhornConfig
from .data import GeneratorConfig
from .losses import LossConfig
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    path: str | None = None  # CSV log; None means generate in-process from `gen`
    meta: str | None = None  # sidecar with split boundaries; defaults to <path>.meta.json
    boundaries: tuple[float, float] | None = None
    length_thresholds: tuple[int, int] | None = None
    max_malformed_fraction: float = 0.01


@dataclass
class ModelSection:
    """Architecture knobs; vocabulary sizes come from the data."""

    embed_dim: int = 16
    hidden_dims: tuple[int, ...] = (64, 32)
    projector_dims: tuple[int, int] = (64, 64)
    z_dim: int = 32
    pooling: str = "mean"
    product_features: bool = True
    dropout_rate: float = 0.2
    leaky_slope: float = 0.01

    def build(self, num_users: int, num_items: int, extra_vocab) -> ModelConfig:
        return ModelConfig(num_users=num_users, num_items=num_items, extra_vocab=tuple(extra_vocab), **asdict(self))


@dataclass
class ScheduleSection:
    w1: float = 1.0
    w2: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossConfig = field(default_factory=LossConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        # the run seed drives every stochastic component
        self.gen.seed = self.seed
        self.train.seed = self.seed
        self.augment.rng_seed = self.seed

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = dict(raw or {})
        _reject_unknown("config", raw, {f.name for f in fields(cls)})
        kw = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            if f.name == "seed":
                kw["seed"] = int(raw["seed"])
                continue
            section_cls = f.default_factory().__class__
            body = raw[f.name] or {}
            if not isinstance(body, dict):
                raise ConfigError(f"section {f.name!r} must be a mapping")
            _reject_unknown(f.name, body, {g.name for g in fields(section_cls)})
            try:
                kw[f.name] = section_cls(**_tuples(body))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {f.name!r}: {exc}") from exc
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load(path) -> RunConfig:
    """Read a JSON or YAML run config; a missing file is an error naming the path."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return RunConfig.from_dict(raw)


def _reject_unknown(where: str, body: dict, known: set[str]) -> None:
    extra = sorted(set(body) - known)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _tuples(body: dict) -> dict:
    return {k: _to_tuple(v) for k, v in body.items()}


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v
