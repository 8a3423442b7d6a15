"""A small conv net assembled from dense, two-branch, and unstructured units.

The network shape is: dense stem conv, a stack of sparse (or dense) conv
units arranged in stages whose first block downsamples by stride 2, global
average pooling, and a dense linear head.  The stem and the head always stay
dense; sparsity applies to the stage convs only.

Every unit knows how to run forward/backward, expose its trainable parameters
by name, serialize itself into checkpoint entries, and rebuild from them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError
from .nn.batchnorm import BatchNormParams, batchnorm_backward, batchnorm_forward
from .nn.conv import (
    ConvSpec,
    conv2d_backward_from_lowered,
    conv2d_from_lowered,
    lower_input,
)
from .nn.layers import (
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)
from .reparam import MergedConv, merge_branches, merged_forward
from .sparsity import (
    NMPattern,
    check_nm,
    magnitude_mask,
    nm_project,
    round_half_up,
    spatial_sparsity,
    uniform_spatial_mask,
)
from .spre import SpReBlock, SpReVariant, refresh_masks, spre_backward_ste, spre_forward
from .tensors import FeatureMap, Mask4, Tensor4, apply_mask, subset_of

_VARIANT_CODE = {
    SpReVariant.NONE: 0,
    SpReVariant.SPRE: 1,
    SpReVariant.SAME: 2,
    SpReVariant.INVERSE: 3,
}
_CODE_VARIANT = {v: k for k, v in _VARIANT_CODE.items()}

_RULE_CODE = {"free": 0, "uniform": 1}
_CODE_RULE = {v: k for k, v in _RULE_CODE.items()}


@dataclass
class TinyCNNConfig:
    """Architecture hyper-parameters for the small test network."""

    widths: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    blocks_per_stage: int = 1
    in_channels: int = 3
    classes: int = 10

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 1:
            raise ConfigError("widths must name at least one stage")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        if self.kernel < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.kernel}")
        if self.blocks_per_stage < 1:
            raise ConfigError(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")


def _bn_entries(prefix: str, bn: BatchNormParams) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.gamma": bn.gamma,
        f"{prefix}.beta": bn.beta,
        f"{prefix}.running_mean": bn.running_mean,
        f"{prefix}.running_var": bn.running_var,
        f"{prefix}.misc": np.array([bn.eps, bn.momentum, float(bn.initialized)], dtype=np.float64),
    }


def _bn_from_entries(entries: dict[str, np.ndarray], prefix: str) -> BatchNormParams:
    try:
        misc = entries[f"{prefix}.misc"]
        return BatchNormParams(
            gamma=entries[f"{prefix}.gamma"],
            beta=entries[f"{prefix}.beta"],
            running_mean=entries[f"{prefix}.running_mean"],
            running_var=entries[f"{prefix}.running_var"],
            eps=float(misc[0]),
            momentum=float(misc[1]),
            initialized=bool(misc[2]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing batch norm entry {exc.args[0]!r}") from exc


class DenseConvBNUnit:
    """conv (no bias) -> batch norm -> relu, fully dense."""

    kind = "dense"

    def __init__(self, name: str, w: Tensor4, bn: BatchNormParams, spec: ConvSpec):
        self.name = name
        self.w = w
        self.bn = bn
        self.spec = spec
        self.grads: dict[str, np.ndarray] = {}
        self._lowered = self._s = self._y = self._bn_cache = None

    def forward(self, x: FeatureMap, mode: str) -> FeatureMap:
        lowered = lower_input(x, self.w.k_h, self.w.k_w, self.spec.stride, self.spec.padding)
        s = conv2d_from_lowered(self.w, self.spec, lowered)
        y, bn_cache = batchnorm_forward(self.bn, s, mode)
        if mode == "train":
            self._lowered, self._s, self._y, self._bn_cache = lowered, s, y, bn_cache
        return relu_forward(y)

    def backward(self, grad: FeatureMap) -> FeatureMap:
        g = relu_backward(self._y, grad)
        bn_g = batchnorm_backward(self.bn, self._s, g, self._bn_cache)
        gw, _, gx = conv2d_backward_from_lowered(
            self.w, self.spec, self._lowered, FeatureMap(bn_g["x"])
        )
        self.grads = {"w": gw.data, "bn.gamma": bn_g["gamma"], "bn.beta": bn_g["beta"]}
        return gx

    def named_params(self) -> dict[str, np.ndarray]:
        return {"w": self.w.data, "bn.gamma": self.bn.gamma, "bn.beta": self.bn.beta}

    def decayed_keys(self) -> set[str]:
        return {"w"}

    def set_param(self, key: str, value: np.ndarray) -> None:
        if key == "w":
            self.w = Tensor4(value)
        elif key == "bn.gamma":
            self.bn.gamma = value
        elif key == "bn.beta":
            self.bn.beta = value
        else:
            raise KeyError(key)

    def refresh(self, step: int) -> None:
        pass

    def invariants(self) -> dict[str, bool]:
        return {}

    def entries(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.w.data}
        out.update(_bn_entries(f"{self.name}.bn", self.bn))
        out[f"{self.name}.meta"] = np.array(
            [self.spec.stride, self.spec.padding], dtype=np.float64
        )
        return out

    @classmethod
    def from_entries(cls, name: str, entries: dict[str, np.ndarray]) -> "DenseConvBNUnit":
        meta = entries[f"{name}.meta"]
        return cls(
            name=name,
            w=Tensor4(entries[f"{name}.w"]),
            bn=_bn_from_entries(entries, f"{name}.bn"),
            spec=ConvSpec(stride=int(meta[0]), padding=int(meta[1])),
        )

    def astype(self, dtype) -> "DenseConvBNUnit":
        return DenseConvBNUnit(self.name, self.w.astype(dtype), self.bn.astype(dtype), self.spec)


class SpReUnit:
    """Two-branch n:m sparse conv cell followed by relu."""

    kind = "spre"

    def __init__(self, name: str, block: SpReBlock, ste_decay: float = 0.0):
        self.name = name
        self.block = block
        self.ste_decay = ste_decay
        self.grads: dict[str, np.ndarray] = {}
        self._x = self._y = None

    def forward(self, x: FeatureMap, mode: str) -> FeatureMap:
        y = spre_forward(self.block, x, mode)
        if mode == "train":
            self._x, self._y = x, y
        return relu_forward(y)

    def backward(self, grad: FeatureMap) -> FeatureMap:
        g = relu_backward(self._y, grad)
        grads = spre_backward_ste(self.block, self._x, g, self.ste_decay)
        gx = grads.pop("x")
        self.grads = grads
        return FeatureMap(gx)

    def named_params(self) -> dict[str, np.ndarray]:
        b = self.block
        out = {
            "w_main": b.w_main.data,
            "bn_main.gamma": b.bn_main.gamma,
            "bn_main.beta": b.bn_main.beta,
        }
        if b.has_extra:
            out["w_extra"] = b.w_extra.data
            out["bn_extra.gamma"] = b.bn_extra.gamma
            out["bn_extra.beta"] = b.bn_extra.beta
        return out

    def decayed_keys(self) -> set[str]:
        # The straight-through rule already applies its own decay to the
        # pruned coordinates of w_main; optimizer weight decay stays on the
        # conv weights and off the batch norm scales.
        keys = {"w_main"}
        if self.block.has_extra:
            keys.add("w_extra")
        return keys

    def set_param(self, key: str, value: np.ndarray) -> None:
        b = self.block
        if key == "w_main":
            b.w_main = Tensor4(value)
        elif key == "w_extra":
            b.w_extra = Tensor4(value)
        elif key == "bn_main.gamma":
            b.bn_main.gamma = value
        elif key == "bn_main.beta":
            b.bn_main.beta = value
        elif key == "bn_extra.gamma":
            b.bn_extra.gamma = value
        elif key == "bn_extra.beta":
            b.bn_extra.beta = value
        else:
            raise KeyError(key)

    def refresh(self, step: int) -> None:
        refresh_masks(self.block, step)

    def invariants(self) -> dict[str, bool]:
        b = self.block
        profile = spatial_sparsity(b.b_main, self.name)
        return {
            "nm": check_nm(b.b_main, b.pattern),
            "extra_subset": subset_of(b.b_extra, b.b_main),
            "profile_flat": bool(np.all(profile.values == b.pattern.sparsity)),
        }

    def entries(self) -> dict[str, np.ndarray]:
        b = self.block
        out = {
            f"{self.name}.w_main": b.w_main.data,
            f"{self.name}.b_main": b.b_main.data,
            f"{self.name}.w_extra": b.w_extra.data,
            f"{self.name}.b_extra": b.b_extra.data,
        }
        out.update(_bn_entries(f"{self.name}.bn_main", b.bn_main))
        out.update(_bn_entries(f"{self.name}.bn_extra", b.bn_extra))
        out[f"{self.name}.meta"] = np.array(
            [
                b.pattern.n,
                b.pattern.m,
                b.spec.stride,
                b.spec.padding,
                _VARIANT_CODE[b.variant],
                b.refresh_period,
                float(b.masks_frozen),
            ],
            dtype=np.float64,
        )
        return out

    @classmethod
    def from_entries(
        cls, name: str, entries: dict[str, np.ndarray], ste_decay: float = 0.0
    ) -> "SpReUnit":
        meta = entries[f"{name}.meta"]
        block = SpReBlock(
            name=name,
            w_main=Tensor4(entries[f"{name}.w_main"]),
            b_main=Mask4(entries[f"{name}.b_main"]),
            w_extra=Tensor4(entries[f"{name}.w_extra"]),
            b_extra=Mask4(entries[f"{name}.b_extra"]),
            bn_main=_bn_from_entries(entries, f"{name}.bn_main"),
            bn_extra=_bn_from_entries(entries, f"{name}.bn_extra"),
            pattern=NMPattern(int(meta[0]), int(meta[1])),
            spec=ConvSpec(stride=int(meta[2]), padding=int(meta[3])),
            variant=_CODE_VARIANT[int(meta[4])],
            refresh_period=int(meta[5]),
            masks_frozen=bool(meta[6]),
        )
        return cls(name=name, block=block, ste_decay=ste_decay)

    def astype(self, dtype) -> "SpReUnit":
        return SpReUnit(self.name, self.block.astype(dtype), self.ste_decay)


class UnstructuredUnit:
    """Masked conv -> BN -> relu where the mask is free or spatially uniform."""

    kind = "unstructured"

    def __init__(
        self,
        name: str,
        w: Tensor4,
        mask: Mask4,
        bn: BatchNormParams,
        spec: ConvSpec,
        rule: str,
        sparsity: float,
        refresh_period: int = 1,
        ste_decay: float = 0.0,
        masks_frozen: bool = False,
    ):
        if rule not in _RULE_CODE:
            raise ConfigError(f"unknown unstructured rule {rule!r}")
        self.name = name
        self.w = w
        self.mask = mask
        self.bn = bn
        self.spec = spec
        self.rule = rule
        self.sparsity = sparsity
        self.refresh_period = refresh_period
        self.ste_decay = ste_decay
        self.masks_frozen = masks_frozen
        self.grads: dict[str, np.ndarray] = {}
        self._lowered = self._s = self._y = self._bn_cache = None

    def forward(self, x: FeatureMap, mode: str) -> FeatureMap:
        lowered = lower_input(x, self.w.k_h, self.w.k_w, self.spec.stride, self.spec.padding)
        s = conv2d_from_lowered(apply_mask(self.w, self.mask), self.spec, lowered)
        y, bn_cache = batchnorm_forward(self.bn, s, mode)
        if mode == "train":
            self._lowered, self._s, self._y, self._bn_cache = lowered, s, y, bn_cache
        return relu_forward(y)

    def backward(self, grad: FeatureMap) -> FeatureMap:
        g = relu_backward(self._y, grad)
        bn_g = batchnorm_backward(self.bn, self._s, g, self._bn_cache)
        gw, _, gx = conv2d_backward_from_lowered(
            apply_mask(self.w, self.mask), self.spec, self._lowered, FeatureMap(bn_g["x"])
        )
        b = self.mask.data
        grad_w = b * gw.data + self.ste_decay * (1 - b) * self.w.data
        self.grads = {
            "w": grad_w.astype(self.w.dtype),
            "bn.gamma": bn_g["gamma"],
            "bn.beta": bn_g["beta"],
        }
        return gx

    def named_params(self) -> dict[str, np.ndarray]:
        return {"w": self.w.data, "bn.gamma": self.bn.gamma, "bn.beta": self.bn.beta}

    def decayed_keys(self) -> set[str]:
        return {"w"}

    def set_param(self, key: str, value: np.ndarray) -> None:
        if key == "w":
            self.w = Tensor4(value)
        elif key == "bn.gamma":
            self.bn.gamma = value
        elif key == "bn.beta":
            self.bn.beta = value
        else:
            raise KeyError(key)

    def refresh(self, step: int) -> None:
        if self.masks_frozen or step % self.refresh_period != 0:
            return
        if self.rule == "free":
            self.mask = magnitude_mask(self.w, self.sparsity)
        else:
            self.mask = uniform_spatial_mask(self.w, self.sparsity)

    def invariants(self) -> dict[str, bool]:
        expected_zeros = (
            round_half_up(self.sparsity * self.w.size)
            if self.rule == "free"
            else (self.w.c_out * self.w.c_in - round_half_up((1 - self.sparsity) * self.w.c_out * self.w.c_in))
            * self.w.k_h
            * self.w.k_w
        )
        out = {"zero_count": int(self.mask.size - self.mask.data.sum()) == expected_zeros}
        if self.rule == "uniform":
            profile = spatial_sparsity(self.mask, self.name)
            spread = float(profile.values.max() - profile.values.min())
            out["profile_spread"] = spread <= 1.0 / (self.w.c_out * self.w.c_in)
        return out

    def entries(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.w.data, f"{self.name}.mask": self.mask.data}
        out.update(_bn_entries(f"{self.name}.bn", self.bn))
        out[f"{self.name}.meta"] = np.array(
            [
                self.sparsity,
                self.spec.stride,
                self.spec.padding,
                _RULE_CODE[self.rule],
                self.refresh_period,
                float(self.masks_frozen),
            ],
            dtype=np.float64,
        )
        return out

    @classmethod
    def from_entries(
        cls, name: str, entries: dict[str, np.ndarray], ste_decay: float = 0.0
    ) -> "UnstructuredUnit":
        meta = entries[f"{name}.meta"]
        return cls(
            name=name,
            w=Tensor4(entries[f"{name}.w"]),
            mask=Mask4(entries[f"{name}.mask"]),
            bn=_bn_from_entries(entries, f"{name}.bn"),
            spec=ConvSpec(stride=int(meta[1]), padding=int(meta[2])),
            rule=_CODE_RULE[int(meta[3])],
            sparsity=float(meta[0]),
            refresh_period=int(meta[4]),
            ste_decay=ste_decay,
            masks_frozen=len(meta) > 5 and bool(meta[5]),
        )

    def astype(self, dtype) -> "UnstructuredUnit":
        return UnstructuredUnit(
            self.name,
            self.w.astype(dtype),
            Mask4(self.mask.data.copy()),
            self.bn.astype(dtype),
            self.spec,
            self.rule,
            self.sparsity,
            self.refresh_period,
            self.ste_decay,
            self.masks_frozen,
        )


class MergedConvUnit:
    """Inference-only unit wrapping a merged convolution (conv + bias -> relu)."""

    kind = "merged"

    def __init__(self, name: str, merged: MergedConv):
        self.name = name
        self.merged = merged
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: FeatureMap, mode: str) -> FeatureMap:
        return relu_forward(merged_forward(self.merged, x))

    def backward(self, grad: FeatureMap) -> FeatureMap:
        raise ConfigError("merged units are inference-only and have no backward pass")

    def named_params(self) -> dict[str, np.ndarray]:
        return {}

    def decayed_keys(self) -> set[str]:
        return set()

    def set_param(self, key: str, value: np.ndarray) -> None:
        raise KeyError(key)

    def refresh(self, step: int) -> None:
        pass

    def invariants(self) -> dict[str, bool]:
        m = self.merged
        on_support = bool(np.all((m.w_bar.data != 0) <= (m.mask.data != 0)))
        return {"nm": check_nm(m.mask, m.pattern), "support": on_support}

    def entries(self) -> dict[str, np.ndarray]:
        m = self.merged
        return {
            f"{self.name}.w_bar": m.w_bar.data,
            f"{self.name}.bias_bar": m.bias_bar,
            f"{self.name}.mask": m.mask.data,
            f"{self.name}.meta": np.array(
                [m.pattern.n, m.pattern.m, m.spec.stride, m.spec.padding], dtype=np.float64
            ),
        }

    @classmethod
    def from_entries(cls, name: str, entries: dict[str, np.ndarray]) -> "MergedConvUnit":
        meta = entries[f"{name}.meta"]
        merged = MergedConv(
            name=name,
            w_bar=Tensor4(entries[f"{name}.w_bar"]),
            bias_bar=entries[f"{name}.bias_bar"],
            mask=Mask4(entries[f"{name}.mask"]),
            pattern=NMPattern(int(meta[0]), int(meta[1])),
            spec=ConvSpec(stride=int(meta[2]), padding=int(meta[3])),
        )
        return cls(name=name, merged=merged)

    def astype(self, dtype) -> "MergedConvUnit":
        return MergedConvUnit(self.name, self.merged.astype(dtype))


class HeadUnit:
    """Global average pooling followed by a dense linear classifier."""

    kind = "head"

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray):
        self.name = name
        self.w = w
        self.b = b
        self.grads: dict[str, np.ndarray] = {}
        self._pooled = None
        self._in_shape = None

    def forward(self, x: FeatureMap, mode: str) -> np.ndarray:
        pooled = global_avg_pool_forward(x)
        if mode == "train":
            self._pooled, self._in_shape = pooled, x.shape
        return linear_forward(self.w, self.b, pooled)

    def backward(self, grad_logits: np.ndarray) -> FeatureMap:
        gw, gb, gp = linear_backward(self.w, self._pooled, grad_logits)
        self.grads = {"w": gw, "b": gb}
        return global_avg_pool_backward(gp, self._in_shape)

    def named_params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def decayed_keys(self) -> set[str]:
        return {"w"}

    def set_param(self, key: str, value: np.ndarray) -> None:
        if key == "w":
            self.w = value
        elif key == "b":
            self.b = value
        else:
            raise KeyError(key)

    def refresh(self, step: int) -> None:
        pass

    def invariants(self) -> dict[str, bool]:
        return {}

    def entries(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    @classmethod
    def from_entries(cls, name: str, entries: dict[str, np.ndarray]) -> "HeadUnit":
        return cls(name=name, w=entries[f"{name}.w"], b=entries[f"{name}.b"])

    def astype(self, dtype) -> "HeadUnit":
        return HeadUnit(self.name, self.w.astype(dtype), self.b.astype(dtype))


class TinyCNN:
    """Unit pipeline ending in a head; the trainable model object."""

    def __init__(self, units: list, head: HeadUnit, arch: TinyCNNConfig):
        self.units = units
        self.head = head
        self.arch = arch

    def forward(self, x: FeatureMap, mode: str = "eval") -> np.ndarray:
        for unit in self.units:
            x = unit.forward(x, mode)
        return self.head.forward(x, mode)

    def backward(self, grad_logits: np.ndarray) -> None:
        g = self.head.backward(grad_logits)
        for unit in reversed(self.units):
            g = unit.backward(g)

    def all_units(self) -> list:
        return [*self.units, self.head]

    def refresh_masks(self, step: int) -> None:
        for unit in self.units:
            unit.refresh(step)

    def invariant_report(self) -> dict[str, dict[str, bool]]:
        report = {}
        for unit in self.units:
            inv = unit.invariants()
            if inv:
                report[unit.name] = inv
        return report

    def sparse_units(self) -> list:
        return [u for u in self.units if u.kind in ("spre", "unstructured", "merged")]

    def to_entries(self) -> dict[str, np.ndarray]:
        entries: dict[str, np.ndarray] = {
            "__arch__": np.array(
                [
                    self.arch.in_channels,
                    self.arch.classes,
                    self.arch.kernel,
                    self.arch.blocks_per_stage,
                    len(self.arch.widths),
                    *self.arch.widths,
                ],
                dtype=np.float64,
            )
        }
        for unit in self.all_units():
            entries.update(unit.entries())
        return entries

    def astype(self, dtype) -> "TinyCNN":
        return TinyCNN(
            units=[u.astype(dtype) for u in self.units],
            head=self.head.astype(dtype),
            arch=self.arch,
        )


def _unit_prefixes(entries: dict[str, np.ndarray]) -> list[str]:
    prefixes: list[str] = []
    for name in entries:
        if name.startswith("__"):
            continue
        prefix = name.split(".", 1)[0]
        if prefix not in prefixes:
            prefixes.append(prefix)
    return prefixes


def model_from_entries(entries: dict[str, np.ndarray], ste_decay: float = 0.0) -> TinyCNN:
    """Rebuild a model from checkpoint entries, preserving unit order."""
    if "__arch__" not in entries:
        raise CheckpointError("checkpoint has no __arch__ entry; not a model checkpoint")
    a = entries["__arch__"]
    n_widths = int(a[4])
    arch = TinyCNNConfig(
        widths=tuple(int(x) for x in a[5 : 5 + n_widths]),
        kernel=int(a[2]),
        blocks_per_stage=int(a[3]),
        in_channels=int(a[0]),
        classes=int(a[1]),
    )
    units: list = []
    head: HeadUnit | None = None
    for prefix in _unit_prefixes(entries):
        if f"{prefix}.w_main" in entries:
            units.append(SpReUnit.from_entries(prefix, entries, ste_decay))
        elif f"{prefix}.w_bar" in entries:
            units.append(MergedConvUnit.from_entries(prefix, entries))
        elif f"{prefix}.mask" in entries:
            units.append(UnstructuredUnit.from_entries(prefix, entries, ste_decay))
        elif f"{prefix}.bn.gamma" in entries:
            units.append(DenseConvBNUnit.from_entries(prefix, entries))
        elif f"{prefix}.b" in entries:
            head = HeadUnit.from_entries(prefix, entries)
        else:
            raise CheckpointError(f"cannot classify checkpoint unit {prefix!r}")
    if head is None:
        raise CheckpointError("checkpoint has no head unit")
    return TinyCNN(units=units, head=head, arch=arch)


def _he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_tiny_cnn(
    arch: TinyCNNConfig,
    pattern: NMPattern,
    variant: SpReVariant = SpReVariant.SPRE,
    mask_mode: str = "nm",
    seed: int = 0,
    dtype=np.float32,
    refresh_period: int = 1,
    ste_decay: float = 0.0,
    extra_scale: float = 1e-2,
) -> TinyCNN:
    """Construct and initialize the network.

    ``mask_mode`` selects what the stage convs are: "nm" (two-branch n:m
    units), "dense", "free" (unstructured magnitude masks at the pattern's
    overall sparsity), or "uniform" (unstructured with equal per-offset
    density).  The stem conv and the linear head are dense in every mode.
    """
    if mask_mode not in ("nm", "dense", "free", "uniform"):
        raise ConfigError(f"unknown mask_mode {mask_mode!r}")
    rng = np.random.default_rng(seed)
    k = arch.kernel
    pad = k // 2
    units: list = []

    stem_w = Tensor4(_he_init(rng, (arch.widths[0], arch.in_channels, k, k), arch.in_channels * k * k, dtype))
    units.append(
        DenseConvBNUnit("stem", stem_w, BatchNormParams.fresh(arch.widths[0], dtype), ConvSpec(1, pad))
    )

    c_prev = arch.widths[0]
    for stage, width in enumerate(arch.widths):
        for b in range(arch.blocks_per_stage):
            stride = 2 if (stage > 0 and b == 0) else 1
            name = f"s{stage}b{b}"
            w = Tensor4(_he_init(rng, (width, c_prev, k, k), c_prev * k * k, dtype))
            spec = ConvSpec(stride, pad)
            if mask_mode == "dense":
                units.append(DenseConvBNUnit(name, w, BatchNormParams.fresh(width, dtype), spec))
            elif mask_mode == "nm":
                block = SpReBlock.from_weights(
                    name,
                    w,
                    pattern,
                    spec,
                    variant=variant,
                    refresh_period=refresh_period,
                    rng=rng,
                    extra_scale=extra_scale,
                )
                units.append(SpReUnit(name, block, ste_decay))
            else:
                p = pattern.sparsity
                mask = (
                    magnitude_mask(w, p) if mask_mode == "free" else uniform_spatial_mask(w, p)
                )
                units.append(
                    UnstructuredUnit(
                        name,
                        w,
                        mask,
                        BatchNormParams.fresh(width, dtype),
                        spec,
                        rule=mask_mode,
                        sparsity=p,
                        refresh_period=refresh_period,
                        ste_decay=ste_decay,
                    )
                )
            c_prev = width

    head_w = _he_init(rng, (arch.classes, c_prev), c_prev, dtype)
    head = HeadUnit("head", head_w, np.zeros(arch.classes, dtype=dtype))
    return TinyCNN(units=units, head=head, arch=arch)


def spre_build_from_dense(
    model: TinyCNN,
    pattern: NMPattern,
    variant: SpReVariant = SpReVariant.SPRE,
    refresh_period: int = 1,
    freeze_masks: bool = True,
    ste_decay: float = 0.0,
) -> TinyCNN:
    """Wrap the stage convs of a dense model into two-branch sparse units.

    This is the pretrained route: the main branch inherits the dense weights
    and batch norm, the unstructured reference mask is computed once from
    those weights, and the extra branch starts at zero with a fresh batch
    norm.  The stem is left dense.
    """
    units: list = []
    for i, unit in enumerate(model.units):
        if i == 0 or unit.kind != "dense":
            units.append(unit)
            continue
        w = unit.w
        b_main = nm_project(w, pattern, unit.name)
        b_u = magnitude_mask(w, pattern.sparsity)
        from .spre import build_variant_mask  # local import to avoid cycle at module load

        use_variant = SpReVariant(variant)
        if w.k_h == 1 and w.k_w == 1:
            use_variant = SpReVariant.NONE
        block = SpReBlock(
            name=unit.name,
            w_main=w,
            b_main=b_main,
            w_extra=Tensor4.zeros(w.shape, dtype=w.dtype),
            b_extra=build_variant_mask(b_main, b_u, pattern, use_variant),
            bn_main=unit.bn,
            bn_extra=BatchNormParams.fresh(w.c_out, dtype=w.dtype),
            pattern=pattern,
            spec=unit.spec,
            variant=use_variant,
            refresh_period=refresh_period,
            masks_frozen=freeze_masks,
        )
        units.append(SpReUnit(unit.name, block, ste_decay))
    return TinyCNN(units=units, head=model.head, arch=model.arch)


def unstructured_build_from_dense(
    model: TinyCNN,
    pattern: NMPattern,
    rule: str,
    refresh_period: int = 1,
    freeze_masks: bool = True,
    ste_decay: float = 0.0,
) -> TinyCNN:
    """Prune the stage convs of a dense model with an unstructured mask.

    One-shot analogue of :func:`spre_build_from_dense` for the unstructured
    baselines: the trained weights and batch norm survive untouched, and a
    mask at the pattern's sparsity level is computed once from the trained
    magnitudes -- either free or confined to a flat spatial profile.  The
    stem is left dense.
    """
    units: list = []
    for i, unit in enumerate(model.units):
        if i == 0 or unit.kind != "dense":
            units.append(unit)
            continue
        p = pattern.sparsity
        mask = magnitude_mask(unit.w, p) if rule == "free" else uniform_spatial_mask(unit.w, p)
        units.append(
            UnstructuredUnit(
                name=unit.name,
                w=unit.w,
                mask=mask,
                bn=unit.bn,
                spec=unit.spec,
                rule=rule,
                sparsity=p,
                refresh_period=refresh_period,
                ste_decay=ste_decay,
                masks_frozen=freeze_masks,
            )
        )
    return TinyCNN(units=units, head=model.head, arch=model.arch)


def reparam_model(model: TinyCNN) -> TinyCNN:
    """Replace every two-branch unit with its merged single-conv equivalent."""
    units: list = []
    for unit in model.units:
        if unit.kind == "spre":
            units.append(MergedConvUnit(unit.name, merge_branches(unit.block)))
        else:
            units.append(unit)
    return TinyCNN(units=units, head=model.head, arch=model.arch)
