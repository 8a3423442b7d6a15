"""Datasets: a deterministic synthetic orientation task and raw CIFAR-10.

The synthetic task draws one soft-edged oriented bar per image; the class
label is the bar's orientation.  Position jitter, per-sample angle wobble,
and pixel noise keep the task non-trivial while leaving it linearly separable
well above chance.  Generation is a pure function of the seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError

CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)

_CHANNEL_GAIN = np.array([1.0, 0.85, 0.7])


@dataclass
class Dataset:
    """Train/validation arrays plus bookkeeping about how they were made."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    classes: int
    meta: dict = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def n_val(self) -> int:
        return self.x_val.shape[0]


def synth_dataset(
    seed: int,
    classes: int = 10,
    samples_per_class: int = 100,
    image_size: int = 16,
    noise: float = 0.45,
    jitter: float = 2.5,
    dtype=np.float32,
) -> Dataset:
    """Oriented-bar classification images, split 80/20 per class.

    Every class contributes exactly ``samples_per_class`` images, so the label
    histogram is uniform by construction.  The same seed always produces
    bit-identical arrays.
    """
    if classes < 2:
        raise DatasetError(f"need at least 2 classes, got {classes}")
    if samples_per_class < 5:
        raise DatasetError(f"need at least 5 samples per class, got {samples_per_class}")
    rng = np.random.default_rng(seed)
    half = (image_size - 1) / 2.0
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    px = xs - half
    py = ys - half

    images = np.empty((classes, samples_per_class, 3, image_size, image_size))
    for c in range(classes):
        theta_c = np.pi * c / classes
        for i in range(samples_per_class):
            theta = theta_c + rng.uniform(-0.06, 0.06)
            cx = rng.uniform(-jitter, jitter)
            cy = rng.uniform(-jitter, jitter)
            length = image_size * rng.uniform(0.30, 0.40)
            width = rng.uniform(0.9, 1.3)
            amp = rng.uniform(0.9, 1.1)
            cos_t, sin_t = np.cos(theta), np.sin(theta)
            d_par = (px - cx) * cos_t + (py - cy) * sin_t
            d_perp = -(px - cx) * sin_t + (py - cy) * cos_t
            bar = amp * np.exp(-(d_perp**2) / (2 * width**2)) * np.exp(-((d_par / length) ** 4))
            pixels = bar[None, :, :] * _CHANNEL_GAIN[:, None, None]
            pixels = pixels + rng.normal(0.0, noise, size=pixels.shape)
            images[c, i] = pixels

    n_train_per_class = (samples_per_class * 4) // 5
    x_train = images[:, :n_train_per_class].reshape(-1, 3, image_size, image_size)
    x_val = images[:, n_train_per_class:].reshape(-1, 3, image_size, image_size)
    y_train = np.repeat(np.arange(classes), n_train_per_class).astype(np.int64)
    y_val = np.repeat(np.arange(classes), samples_per_class - n_train_per_class).astype(np.int64)

    mean = float(x_train.mean())
    std = float(x_train.std())
    x_train = (x_train - mean) / std
    x_val = (x_val - mean) / std

    perm = rng.permutation(x_train.shape[0])
    x_train, y_train = x_train[perm], y_train[perm]

    return Dataset(
        x_train=x_train.astype(dtype),
        y_train=y_train,
        x_val=x_val.astype(dtype),
        y_val=y_val,
        classes=classes,
        meta={
            "kind": "synth",
            "seed": seed,
            "image_size": image_size,
            "samples_per_class": samples_per_class,
            "noise": noise,
            "jitter": jitter,
            "normalize_mean": mean,
            "normalize_std": std,
        },
    )


_RECORD_BYTES = 3073
_RECORDS_PER_BATCH = 10000
_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
_TEST_FILE = "test_batch.bin"


def _read_cifar_batch(path: str) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.isfile(path):
        raise DatasetError(f"missing batch file {path}")
    with open(path, "rb") as f:
        raw = f.read()
    expected = _RECORD_BYTES * _RECORDS_PER_BATCH
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, got {len(raw)}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(_RECORDS_PER_BATCH, _RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetError(f"{path}: label {int(labels.max())} out of range 0..9")
    pixels = records[:, 1:].reshape(_RECORDS_PER_BATCH, 3, 32, 32)
    return pixels, labels


def cifar10_load(
    directory: str | os.PathLike,
    mean: tuple[float, float, float] = CIFAR_MEAN,
    std: tuple[float, float, float] = CIFAR_STD,
    dtype=np.float32,
) -> Dataset:
    """Load the raw-binary CIFAR-10 layout: 5 train batches plus a test batch.

    Each record is 1 label byte followed by 3072 pixel bytes (channel-major
    32x32).  Pixels are scaled to [0, 1] and normalized per channel with the
    given constants, which are recorded in the dataset metadata.
    """
    directory = os.fspath(directory)
    train_parts = [_read_cifar_batch(os.path.join(directory, f)) for f in _TRAIN_FILES]
    test_pixels, y_val = _read_cifar_batch(os.path.join(directory, _TEST_FILE))
    x_train_u8 = np.concatenate([p for p, _ in train_parts], axis=0)
    y_train = np.concatenate([l for _, l in train_parts], axis=0)

    mean_arr = np.asarray(mean, dtype=np.float64).reshape(1, 3, 1, 1)
    std_arr = np.asarray(std, dtype=np.float64).reshape(1, 3, 1, 1)
    x_train = ((x_train_u8 / 255.0 - mean_arr) / std_arr).astype(dtype)
    x_val = ((test_pixels / 255.0 - mean_arr) / std_arr).astype(dtype)

    return Dataset(
        x_train=x_train,
        y_train=y_train,
        x_val=x_val,
        y_val=y_val,
        classes=10,
        meta={
            "kind": "cifar10",
            "directory": directory,
            "normalize_mean": list(mean),
            "normalize_std": list(std),
        },
    )
