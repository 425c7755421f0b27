"""Strictly validated experiment configuration (YAML or JSON)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .queue import DEFAULT_FLOW_LEVELS, DEFAULT_SERVICE_LEVELS, LinearShape, QueueConfig

Solver = Literal["exact", "flow", "sgda", "demo-bilinear", "all"]


class ConfigError(ValueError):
    """Configuration file could not be read or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Linear(_Strict):
    intercept: float
    slope: float


class QueueSection(_Strict):
    L: int = Field(4, ge=1, description="buffer size")
    service_levels: list[float] = Field(default_factory=lambda: list(DEFAULT_SERVICE_LEVELS))
    flow_levels: list[float] = Field(default_factory=lambda: list(DEFAULT_FLOW_LEVELS))
    h1: float = 0.0
    h2: float = 0.0
    gamma: float = Field(0.9, gt=0.0, lt=1.0)
    action_mode: Literal["product", "paired"] = "product"
    holding_reward: Linear = Linear(intercept=5.0, slope=-1.0)
    service_reward: Linear = Linear(intercept=3.0, slope=-10.0)
    flow_reward: Linear = Linear(intercept=-3.0, slope=10.0)

    @model_validator(mode="after")
    def _levels(self):
        self.to_queue_config()  # surfaces level-range errors at parse time
        return self

    def to_queue_config(self) -> QueueConfig:
        return QueueConfig(
            buffer_size=self.L,
            service_levels=tuple(self.service_levels),
            flow_levels=tuple(self.flow_levels),
            holding_reward=LinearShape(**self.holding_reward.model_dump()),
            service_reward=LinearShape(**self.service_reward.model_dump()),
            flow_reward=LinearShape(**self.flow_reward.model_dump()),
            thresholds=(self.h1, self.h2),
            discount=self.gamma,
            action_mode=self.action_mode,
        )


class ModelSection(_Strict):
    path: Path

    @field_validator("path")
    @classmethod
    def _exists(cls, path: Path) -> Path:
        if not path.is_file():
            raise ValueError(f"model file {path} does not exist")
        return path


class FlowSection(_Strict):
    rho: float = Field(1.0, gt=0.0)
    step: float = Field(1e-3, gt=0.0)
    horizon: float = Field(1e4, gt=0.0)
    tol: float = Field(1e-7, gt=0.0)
    record_every: int = Field(10_000, ge=1)

    @model_validator(mode="after")
    def _stable(self):
        if not self.step < self.rho / 2:
            raise ValueError("flow.step must be below flow.rho / 2")
        return self


class SgdaSection(_Strict):
    rho: float = Field(1.0, gt=0.0)
    a0: float = Field(0.5, gt=0.0)
    n0: float = Field(10.0, ge=1.0)
    kappa: float = Field(0.6, gt=0.5, le=1.0,
                         description="needs 0.5 < kappa <= 1 for sum(alpha) = inf, sum(alpha^2) < inf")
    budget: int = Field(2_000_000, ge=0)
    stride: int = Field(10_000, ge=1)
    literal_hat_update: bool = False
    sweep: list[int] = Field(default_factory=list, description="extra seeds run in parallel")

    @model_validator(mode="after")
    def _budget(self):
        if self.budget % self.stride:
            raise ValueError("sgda.budget must be a multiple of sgda.stride so the final "
                             "iterate is recorded")
        return self


class OutputSection(_Strict):
    dir: Path = Path("results")


class ExperimentConfig(_Strict):
    queue: QueueSection | None = None
    model: ModelSection | None = None
    flow: FlowSection = FlowSection()
    sgda: SgdaSection = SgdaSection()
    output: OutputSection = OutputSection()
    solver: Solver = "all"
    seed: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _one_source(self):
        if self.queue is not None and self.model is not None:
            raise ValueError("give either a queue section or a model section, not both")
        return self

    def queue_or_default(self) -> QueueSection:
        return self.queue if self.queue is not None else QueueSection()


def _format_errors(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def parse_config_data(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML (or JSON, by suffix) config file and validate it strictly."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from None
    if isinstance(data, dict) and isinstance(data.get("model"), dict):
        model_path = data["model"].get("path")
        if isinstance(model_path, str) and not Path(model_path).is_absolute():
            data["model"] = {**data["model"], "path": str(path.parent / model_path)}
    return parse_config_data(data)
