"""Workbench configuration: one JSON object with a section per stage.

Unknown keys are rejected. Defaults: beta 0.3, lambda 0.1, batch 32,
lr 1e-5 and no weight decay.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .objective import LossConfig
from .pairs import MiningConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeshConfig:
    format: str = "xml"


@dataclass(frozen=True)
class LabelConfig:
    ancestor_expansion: bool = True
    depth_weighting: bool = True


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    gain: str = "linear"


@dataclass(frozen=True)
class GridSpec:
    beta_values: tuple[float, ...] = (0.1, 0.3, 0.5)
    lambda_values: tuple[float, ...] = (0.05, 0.1, 0.2)

    def __post_init__(self):
        if not self.beta_values or not self.lambda_values:
            raise ValueError("grid value lists must be non-empty")


# JSON spelling -> dataclass field, where they differ
_ALIASES = {"loss": {"lambda": "lam"}}

ABLATIONS = {
    "w/o-ancestor": ("w/o Ancestor Label", "labels", {"ancestor_expansion": False}),
    "w/o-depth": ("w/o Depth-based Weight", "labels", {"depth_weighting": False}),
    "w/o-lmse": ("w/o L_MSE", "loss", {"use_mse": False}),
    "w/o-lcon": ("w/o L_Con", "loss", {"use_con": False}),
    "w/o-lora": ("w/o LoRA", "encoder", {"mode": "full"}),
}


@dataclass(frozen=True)
class WorkbenchConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.loss.beta != self.mining.beta:
            # one beta drives both the pair filter and the loss precondition
            object.__setattr__(self, "loss", dataclasses.replace(self.loss, beta=self.mining.beta))

    @classmethod
    def from_dict(cls, data: dict) -> "WorkbenchConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        built = {}
        for name, f in sections.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be an object")
            aliases = _ALIASES.get(name, {})
            kwargs = {aliases.get(k, k): v for k, v in raw.items()}
            section_cls = f.default_factory
            allowed = {g.name for g in dataclasses.fields(section_cls)}
            bad = set(kwargs) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(sorted(bad))}")
            try:
                built[name] = section_cls(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from None
        return cls(**built)

    @classmethod
    def from_json(cls, text: str) -> "WorkbenchConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "WorkbenchConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            sec = dataclasses.asdict(getattr(self, f.name))
            inv = {v: k for k, v in _ALIASES.get(f.name, {}).items()}
            out[f.name] = {inv.get(k, k): v for k, v in sec.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **sections) -> "WorkbenchConfig":
        """``cfg.replace(loss={"lam": 0.2})`` updates fields inside sections."""
        changes = {name: dataclasses.replace(getattr(self, name), **fields) for name, fields in sections.items()}
        return dataclasses.replace(self, **changes)

    def ablate(self, name: str) -> "WorkbenchConfig":
        try:
            _, section, fields = ABLATIONS[name]
        except KeyError:
            raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}") from None
        return self.replace(**{section: fields})
