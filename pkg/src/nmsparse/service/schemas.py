"""Pydantic request/response models for the HTTP service.

The train config model doubles as the on-disk JSON config schema for the CLI;
``extra="forbid"`` makes unknown keys fail fast instead of being ignored.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..model import TinyCNNConfig
from ..sparsity import NMPattern
from ..training import DatasetConfig, TrainConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PatternModel(StrictModel):
    n: int = Field(ge=1, description="survivors per group")
    m: int = Field(ge=1, description="group size along input channels")


class ArchModel(StrictModel):
    widths: list[int] = [16, 32, 64]
    kernel: int = Field(default=3, ge=1)
    blocks_per_stage: int = Field(default=1, ge=1)
    in_channels: int = Field(default=3, ge=1)
    classes: int = Field(default=10, ge=2)


class DatasetModel(StrictModel):
    kind: Literal["synth", "cifar10"] = "synth"
    classes: int = Field(default=10, ge=2)
    samples_per_class: int = Field(default=100, ge=5)
    image_size: int = Field(default=16, ge=8)
    seed: int = 0
    noise: float = Field(default=0.45, ge=0)
    jitter: float = Field(default=2.5, ge=0)
    directory: Optional[str] = None


class TrainConfigModel(StrictModel):
    """Full training job description; also the JSON config file schema."""

    pattern: PatternModel = PatternModel(n=1, m=16)
    variant: Literal["spre", "same", "inverse", "none"] = "spre"
    mask_mode: Literal["nm", "dense", "free", "uniform"] = "nm"
    method: Literal["scratch", "pretrain_finetune"] = "scratch"
    epochs: int = Field(default=60, ge=0)
    pretrain_epochs: Optional[int] = Field(default=None, ge=0)
    batch_size: int = Field(default=128, ge=1)
    lr: float = Field(default=0.1, ge=0)
    finetune_lr: Optional[float] = Field(default=None, ge=0)
    lr_schedule: Literal["cosine", "step"] = "cosine"
    lr_step_every: int = Field(default=20, ge=1)
    lr_step_gamma: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=5e-4, ge=0)
    ste_decay: float = Field(default=2e-4, ge=0)
    refresh_period: Optional[int] = Field(default=None, ge=1)
    extra_scale: float = Field(default=1e-2, ge=0)
    seed: int = 0
    dtype: Literal["f32", "f64"] = "f32"
    model: ArchModel = ArchModel()
    dataset: DatasetModel = DatasetModel()
    checkpoint_out: Optional[str] = None
    metrics_out: Optional[str] = None
    profiles_out: Optional[str] = None

    def to_core(self) -> TrainConfig:
        return TrainConfig(
            pattern=NMPattern(self.pattern.n, self.pattern.m),
            variant=self.variant,
            mask_mode=self.mask_mode,
            method=self.method,
            epochs=self.epochs,
            pretrain_epochs=self.pretrain_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            finetune_lr=self.finetune_lr,
            lr_schedule=self.lr_schedule,
            lr_step_every=self.lr_step_every,
            lr_step_gamma=self.lr_step_gamma,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            ste_decay=self.ste_decay,
            refresh_period=self.refresh_period,
            extra_scale=self.extra_scale,
            seed=self.seed,
            dtype=self.dtype,
            model=TinyCNNConfig(
                widths=tuple(self.model.widths),
                kernel=self.model.kernel,
                blocks_per_stage=self.model.blocks_per_stage,
                in_channels=self.model.in_channels,
                classes=self.model.classes,
            ),
            dataset=DatasetConfig(
                kind=self.dataset.kind,
                classes=self.dataset.classes,
                samples_per_class=self.dataset.samples_per_class,
                image_size=self.dataset.image_size,
                seed=self.dataset.seed,
                noise=self.dataset.noise,
                jitter=self.dataset.jitter,
                directory=self.dataset.directory,
            ),
        )


class TrainResponse(StrictModel):
    final_val_acc: float
    final_train_acc: float
    epochs_run: int
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None
    profiles: Optional[str] = None


class ProfileRequest(StrictModel):
    checkpoint: str
    out: str


class ProfileResponse(StrictModel):
    out: str
    layers: list[str]
    rows: int


class ProjectRequest(StrictModel):
    checkpoint: str
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    out: str


class ProjectResponse(StrictModel):
    out: str
    layers: list[str]
    pattern: str


class SpreBuildRequest(StrictModel):
    checkpoint: str
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    variant: Literal["spre", "same", "inverse"] = "spre"
    out: str


class SpreBuildResponse(StrictModel):
    out: str
    layers: list[str]
    pattern: str
    variant: str


class ReparamRequest(StrictModel):
    checkpoint: str
    out: str


class ReparamResponse(StrictModel):
    out: str
    layers: list[str]


class VerifyRequest(StrictModel):
    checkpoint_two_branch: str
    checkpoint_merged: str
    trials: int = Field(default=100, ge=0)
    tolerance: float = Field(default=1e-10, gt=0)
    seed: int = 0
    dtype: Literal["f32", "f64"] = "f64"


class LayerEquivalence(StrictModel):
    trials: int
    max_abs_diff: float
    tolerance: float
    passed: bool


class VerifyResponse(StrictModel):
    trials: int
    tolerance: float
    dtype: str
    max_abs_diff: float
    passed: bool
    layers: dict[str, LayerEquivalence]


class ErrorBody(StrictModel):
    error: str
    kind: str
