"""Run configuration: one YAML file holding every hyperparameter.

Precedence is command-line flag > config file > built-in default.  Schema::

    input: faces/            # directory, glob or single file
    output: protected/
    bundle: null             # manifest path; falls back to $VOIDKIT_BUNDLE
    seed: 0
    jobs: 1
    margin: 0.6
    tau_p: 0.5
    timestep_mode: uniform   # or fixed
    dump_masks: false
    budget:   {epsilon: 0.047058823529411764, alpha: 0.00392156862745098, iterations: 30}
    weights:  {loc: -1.0, id: -1.0, attn: 0.01, feat: 0.01}
    adaptive: {enabled: true, q: 0.5, gamma: 0.3, sigma: 3.0, on_projected: true}
    evaluate: {targets: null, protected: null, transforms: true}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import LossWeights, PerturbationBudget
from .optimizer import AdaptiveConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class EvaluateConfig:
    targets: str | None = None
    protected: str | None = None
    transforms: bool = True


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    output: str = "voidkit_out"
    bundle: str | None = None
    seed: int = 0
    jobs: int = 1
    margin: float = 0.6
    tau_p: float = 0.5
    timestep_mode: str = "uniform"
    dump_masks: bool = False
    budget: PerturbationBudget = field(default_factory=PerturbationBudget)
    weights: LossWeights = field(default_factory=LossWeights)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError("jobs", f"must be a positive integer, got {self.jobs!r}")
        if not 0 < self.margin < 2:
            raise ConfigError("margin", "must lie in (0, 2)")
        if not 0 < self.tau_p < 1:
            raise ConfigError("tau_p", "must lie in (0, 1)")
        if self.timestep_mode not in ("uniform", "fixed"):
            raise ConfigError("timestep_mode", "must be 'uniform' or 'fixed'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a mapping")
        nested = {"budget": PerturbationBudget, "weights": LossWeights,
                  "adaptive": AdaptiveConfig, "evaluate": EvaluateConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            if key in nested:
                kw[key] = _build(nested[key], key, value)
            else:
                kw[key] = value
        try:
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("<root>", str(exc)) from None

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"not valid YAML: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, **flat) -> "RunConfig":
        """Apply dotted overrides such as ``{"budget.epsilon": 0.1}``; None means unset."""
        d = self.to_dict()
        for key, value in flat.items():
            if value is None:
                continue
            head, _, tail = key.partition(".")
            if tail:
                d[head][tail] = value
            else:
                d[head] = value
        return RunConfig.from_dict(d)


def _build(cls, name, value):
    if isinstance(value, cls):
        return value
    if not isinstance(value, dict):
        raise ConfigError(name, "must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in value:
        if k not in names:
            raise ConfigError(f"{name}.{k}", "unknown key")
    try:
        return cls(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None
