"""Training loop, evaluation, and the free-vs-uniform mask ablation.

Runs are deterministic: one seed fixes initialization and batch order (the
dataset has its own seed), numpy does the rest single-threaded.  Masks are
refreshed on a fixed step period, once per epoch by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, cifar10_load, synth_dataset
from .errors import ConfigError
from .model import (
    TinyCNN,
    TinyCNNConfig,
    build_tiny_cnn,
    spre_build_from_dense,
    unstructured_build_from_dense,
)
from .nn.layers import softmax_cross_entropy
from .nn.optim import SGD
from .sparsity import NMPattern, SparsityProfile, spatial_sparsity
from .spre import SpReVariant
from .tensors import FeatureMap

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class DatasetConfig:
    """Which dataset to train on and how to build it."""

    kind: str = "synth"
    classes: int = 10
    samples_per_class: int = 100
    image_size: int = 16
    seed: int = 0
    noise: float = 0.45
    jitter: float = 2.5
    directory: str | None = None

    def __post_init__(self):
        if self.kind not in ("synth", "cifar10"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "cifar10" and not self.directory:
            raise ConfigError("cifar10 dataset needs a directory")


@dataclass
class TrainConfig:
    """Everything a training run depends on."""

    pattern: NMPattern = field(default_factory=lambda: NMPattern(1, 16))
    variant: SpReVariant = SpReVariant.SPRE
    mask_mode: str = "nm"
    method: str = "scratch"
    epochs: int = 60
    pretrain_epochs: int | None = None
    batch_size: int = 128
    lr: float = 0.1
    finetune_lr: float | None = None
    lr_schedule: str = "cosine"
    lr_step_every: int = 20
    lr_step_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ste_decay: float = 2e-4
    refresh_period: int | None = None
    extra_scale: float = 1e-2
    seed: int = 0
    dtype: str = "f32"
    model: TinyCNNConfig = field(default_factory=TinyCNNConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def __post_init__(self):
        self.variant = SpReVariant(self.variant)
        if self.mask_mode not in ("nm", "dense", "free", "uniform"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")
        if self.method not in ("scratch", "pretrain_finetune"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.finetune_lr is not None and self.finetune_lr < 0:
            raise ConfigError(f"finetune_lr must be >= 0, got {self.finetune_lr}")
        if self.lr_schedule not in ("cosine", "step"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.ste_decay < 0:
            raise ConfigError("decay factors must be >= 0")
        if self.refresh_period is not None and self.refresh_period < 1:
            raise ConfigError(f"refresh_period must be >= 1, got {self.refresh_period}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float


@dataclass
class RunMetrics:
    """Everything a run reports back: per-epoch curves plus final snapshots."""

    records: list[EpochRecord] = field(default_factory=list)
    final_train_acc: float = 0.0
    final_val_acc: float = 0.0
    profiles: list[dict[str, SparsityProfile]] = field(default_factory=list)
    invariants: list[dict[str, dict[str, bool]]] = field(default_factory=list)

    def jsonl_records(self) -> list[dict]:
        return [
            {"epoch": r.epoch, "loss": r.loss, "train_acc": r.train_acc, "val_acc": r.val_acc}
            for r in self.records
        ]


def load_dataset(cfg: DatasetConfig, dtype=np.float32) -> Dataset:
    if cfg.kind == "synth":
        return synth_dataset(
            seed=cfg.seed,
            classes=cfg.classes,
            samples_per_class=cfg.samples_per_class,
            image_size=cfg.image_size,
            noise=cfg.noise,
            jitter=cfg.jitter,
            dtype=dtype,
        )
    return cifar10_load(cfg.directory, dtype=dtype)


def lr_at(config: TrainConfig, epoch: int, total_epochs: int, base_lr: float | None = None) -> float:
    """Learning rate for a given 0-based epoch.

    ``base_lr`` overrides the configured peak rate; the fine-tune phase uses
    it to restart the schedule from a smaller value.
    """
    peak = config.lr if base_lr is None else base_lr
    if config.lr_schedule == "cosine":
        if total_epochs <= 1:
            return peak
        return peak * 0.5 * (1.0 + math.cos(math.pi * epoch / (total_epochs - 1)))
    return peak * (config.lr_step_gamma ** (epoch // config.lr_step_every))


def predict(model: TinyCNN, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample, computed in eval mode."""
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], batch_size):
        xb = FeatureMap(x[start : start + batch_size])
        logits = model.forward(xb, "eval")
        out[start : start + batch_size] = logits.argmax(axis=1)
    return out


def evaluate(model: TinyCNN, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Classification accuracy in eval mode."""
    return float((predict(model, x, batch_size) == y).mean())


def _snapshot_profiles(model: TinyCNN) -> dict[str, SparsityProfile]:
    profiles = {}
    for unit in model.sparse_units():
        if unit.kind == "spre":
            profiles[unit.name] = spatial_sparsity(unit.block.b_main, unit.name)
        elif unit.kind == "unstructured":
            profiles[unit.name] = spatial_sparsity(unit.mask, unit.name)
        else:
            profiles[unit.name] = spatial_sparsity(unit.merged.mask, unit.name)
    return profiles


def _check_invariants(model: TinyCNN) -> dict[str, dict[str, bool]]:
    report = model.invariant_report()
    for layer, checks in report.items():
        for check, ok in checks.items():
            if not ok:
                raise ConfigError(f"layer {layer!r} violated invariant {check!r} during training")
    return report


def _run_epochs(
    model: TinyCNN,
    config: TrainConfig,
    data: Dataset,
    epochs: int,
    rng: np.random.Generator,
    metrics: RunMetrics,
    epoch_offset: int = 0,
    base_lr: float | None = None,
) -> None:
    opt = SGD(momentum=config.momentum)
    n = data.n_train
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    refresh_period = config.refresh_period or steps_per_epoch
    for unit in model.units:
        if hasattr(unit, "block"):
            unit.block.refresh_period = refresh_period
        elif hasattr(unit, "refresh_period"):
            unit.refresh_period = refresh_period

    step = 0
    for epoch in range(epochs):
        lr = lr_at(config, epoch, epochs, base_lr)
        order = rng.permutation(n)
        loss_sum = 0.0
        hit_sum = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = FeatureMap(data.x_train[idx])
            yb = data.y_train[idx]
            logits = model.forward(xb, "train")
            loss, grad_logits = softmax_cross_entropy(logits, yb)
            model.backward(grad_logits)
            loss_sum += loss * len(idx)
            hit_sum += int((logits.argmax(axis=1) == yb).sum())
            for unit in model.all_units():
                decayed = unit.decayed_keys()
                for key, param in unit.named_params().items():
                    wd = config.weight_decay if key in decayed else 0.0
                    new = opt.step(f"{unit.name}.{key}", param, unit.grads[key], lr, wd)
                    unit.set_param(key, new)
            step += 1
            model.refresh_masks(step)
        val_acc = evaluate(model, data.x_val, data.y_val)
        metrics.records.append(
            EpochRecord(
                epoch=epoch_offset + epoch,
                loss=loss_sum / n,
                train_acc=hit_sum / n,
                val_acc=val_acc,
            )
        )
        metrics.profiles.append(_snapshot_profiles(model))
        metrics.invariants.append(_check_invariants(model))


def train(config: TrainConfig) -> tuple[TinyCNN, RunMetrics]:
    """Run one full training job and return the model plus its metrics.

    With ``method="scratch"`` the configured sparse model trains end to end.
    With ``method="pretrain_finetune"`` a dense model trains first, the stage
    convs are then converted according to ``mask_mode`` -- two-branch units
    for ``"nm"``, one-shot magnitude pruning for ``"free"``/``"uniform"`` --
    with masks computed once from the pretrained weights (and frozen), and
    fine-tuning runs for ``epochs`` at ``finetune_lr`` (the base ``lr`` when
    unset).  With zero epochs the initial model is evaluated and returned
    untouched.
    """
    dtype = config.np_dtype
    data = load_dataset(config.dataset, dtype)
    if config.dataset.kind == "synth" and config.model.classes != data.classes:
        raise ConfigError(
            f"model has {config.model.classes} classes but dataset provides {data.classes}"
        )
    rng = np.random.default_rng(config.seed)
    metrics = RunMetrics()

    if config.method == "scratch":
        model = build_tiny_cnn(
            config.model,
            config.pattern,
            variant=config.variant,
            mask_mode=config.mask_mode,
            seed=config.seed,
            dtype=dtype,
            refresh_period=config.refresh_period or 1,
            ste_decay=config.ste_decay,
            extra_scale=config.extra_scale,
        )
        _run_epochs(model, config, data, config.epochs, rng, metrics)
    else:
        if config.mask_mode == "dense":
            raise ConfigError("pretrain_finetune needs a sparse mask_mode, got 'dense'")
        pretrain_epochs = (
            config.pretrain_epochs if config.pretrain_epochs is not None else config.epochs
        )
        model = build_tiny_cnn(
            config.model,
            config.pattern,
            variant=config.variant,
            mask_mode="dense",
            seed=config.seed,
            dtype=dtype,
        )
        _run_epochs(model, config, data, pretrain_epochs, rng, metrics)
        if config.mask_mode == "nm":
            model = spre_build_from_dense(
                model,
                config.pattern,
                variant=config.variant,
                refresh_period=config.refresh_period or 1,
                freeze_masks=True,
                ste_decay=config.ste_decay,
            )
        else:
            model = unstructured_build_from_dense(
                model,
                config.pattern,
                rule=config.mask_mode,
                refresh_period=config.refresh_period or 1,
                freeze_masks=True,
                ste_decay=config.ste_decay,
            )
        _run_epochs(
            model,
            config,
            data,
            config.epochs,
            rng,
            metrics,
            epoch_offset=pretrain_epochs,
            base_lr=config.finetune_lr,
        )

    metrics.final_val_acc = evaluate(model, data.x_val, data.y_val)
    metrics.final_train_acc = evaluate(model, data.x_train, data.y_train)
    if not metrics.profiles:
        metrics.profiles.append(_snapshot_profiles(model))
        metrics.invariants.append(_check_invariants(model))
    return model, metrics


def run_uniform_ablation(config: TrainConfig) -> tuple[RunMetrics, RunMetrics]:
    """Train twin runs differing only in the mask rule: free vs uniform.

    Both runs share the seed, so they start from identical weights; the only
    difference is whether the refreshed mask may concentrate survivors at
    informative kernel offsets or must spread them evenly.
    """
    _, free_metrics = train(replace(config, mask_mode="free"))
    _, uniform_metrics = train(replace(config, mask_mode="uniform"))
    return free_metrics, uniform_metrics
