"""Experiment configuration (JSON), validated before any work starts."""

from __future__ import annotations

import json
import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import RawFormat
from .distill import DistillConfig
from .nn.training import TrainConfig
from .nn.zoo import MODEL_IDS
from .pruning import HardwareProfile
from .resources import CostModel


class ConfigError(ValueError):
    def __init__(self, problems: list[str], source: str = "") -> None:
        self.problems = problems
        head = f"invalid config {source}".rstrip()
        super().__init__(head + ":\n" + "\n".join(f"  - {p}" for p in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetBlock(_Strict):
    kind: Literal["synthetic", "raw"] = "synthetic"
    seed: Optional[int] = None
    # synthetic
    classes: int = Field(4, ge=2)
    input_shape: tuple[int, ...] = (3, 8, 8)
    train_per_class: int = Field(200, ge=1)
    test_per_class: int = Field(100, ge=1)
    separation: float = Field(1.0, ge=0)
    public_size: int = Field(1024, ge=1)
    public_mode: Literal["mixup", "same"] = "mixup"
    # raw records (label byte + C*H*W pixel bytes)
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    public_path: Optional[str] = None
    public_classes: Optional[int] = None
    mean: Optional[tuple[float, ...]] = None
    std: Optional[tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check(self):
        if any(d < 1 for d in self.input_shape):
            raise ValueError("input_shape extents must be positive")
        if self.kind == "raw":
            missing = [k for k in ("train_path", "test_path", "public_path") if getattr(self, k) is None]
            if missing:
                raise ValueError(f"raw datasets need {', '.join(missing)}")
            if len(self.input_shape) != 3:
                raise ValueError("raw datasets need a (C, H, W) input_shape")
        return self

    def raw_format(self, n_classes: int | None = None) -> RawFormat:
        c, h, w = self.input_shape
        return RawFormat(c, h, w, n_classes or self.classes, mean=self.mean, std=self.std)


class PartitionBlock(_Strict):
    alpha: float = Field(1.0, gt=0)
    min_shard: Optional[int] = Field(None, ge=0)
    max_retries: int = Field(1000, ge=1)


class ClientBlock(_Strict):
    id: str = Field(min_length=1)
    gflops: float = Field(gt=0)
    width: float = Field(1.0, gt=0)
    ram_gb: Optional[float] = Field(None, gt=0)

    def profile(self) -> HardwareProfile:
        ram = int(self.ram_gb * 1e9) if self.ram_gb is not None else None
        return HardwareProfile(self.id, self.gflops * 1e9, ram, self.width)


class TrainBlock(_Strict):
    optimizer: Literal["sgd-momentum", "adam"] = "sgd-momentum"
    schedule: Literal["cosine", "constant"] = "cosine"
    lr_max: float = Field(0.0025, gt=0)
    lr_min: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0)
    weight_decay: float = Field(3e-4, ge=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(5, ge=0)

    @model_validator(mode="after")
    def _lr(self):
        if self.lr_max < self.lr_min:
            raise ValueError("lr_max must be >= lr_min")
        return self

    def build(self) -> TrainConfig:
        return TrainConfig(**self.model_dump())


class DistillBlock(_Strict):
    temperature: float = Field(4.0, gt=0)
    mode: Literal["kl", "l2"] = "kl"
    steps: int = Field(200, ge=1)
    batch_size: int = Field(512, ge=1)
    lr: float = Field(1e-3, ge=0)

    def build(self) -> DistillConfig:
        return DistillConfig(**self.model_dump())


class CostBlock(_Strict):
    bits: Literal[8, 16, 32, 64] = 32
    logit_bits: Optional[Literal[8, 16, 32, 64]] = None

    def build(self) -> CostModel:
        return CostModel(self.bits, self.logit_bits)


class ExperimentConfig(_Strict):
    seed: int = 0
    strategy: Literal["fedavg", "static", "reft"] = "reft"
    model: Literal[MODEL_IDS] = "cnn-small"  # type: ignore[valid-type]
    rounds: int = Field(1, ge=1)
    f_lambda_gflops: Optional[float] = Field(None, gt=0)
    clients: list[ClientBlock] = Field(min_length=1)
    dataset: DatasetBlock = DatasetBlock()
    partition: PartitionBlock = PartitionBlock()
    train: TrainBlock = TrainBlock()
    distill: DistillBlock = DistillBlock()
    cost: CostBlock = CostBlock()
    output_dir: str = "runs/out"

    @model_validator(mode="after")
    def _resolve(self):
        if self.strategy != "fedavg" and self.f_lambda_gflops is None:
            raise ValueError(f"strategy {self.strategy!r} needs f_lambda_gflops")
        ids = [c.id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ValueError("client ids must be unique")
        if self.partition.min_shard is None:
            resolved = self.partition.model_copy(
                update={"min_shard": max(2 * self.train.batch_size, 32)}
            )
            object.__setattr__(self, "partition", resolved)
        return self

    @property
    def f_lambda(self) -> float | None:
        return None if self.f_lambda_gflops is None else self.f_lambda_gflops * 1e9

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def profiles(self) -> list[HardwareProfile]:
        return [c.profile() for c in self.clients]

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def dumps(self) -> str:
        return json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n"


def _line_of(text: str, loc: tuple) -> int | None:
    pos = 0
    found = False
    for key in loc:
        if not isinstance(key, str):
            continue
        i = text.find(json.dumps(key), pos)
        if i < 0:
            break
        pos, found = i, True
    return text.count("\n", 0, pos) + 1 if found else None


def parse_config_text(text: str, source: str = "<string>", overrides: dict | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}: {exc.msg}"], source) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"], source)
    raw.update(overrides or {})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(k) for k in loc) or "<root>"
            line = _line_of(text, loc)
            prefix = f"line {line}: " if line else ""
            problems.append(f"{prefix}{where}: {err['msg']}")
        raise ConfigError(problems, source) from None


def parse_config(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, str(path), overrides)
