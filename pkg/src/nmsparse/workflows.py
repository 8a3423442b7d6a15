"""Command implementations behind the service endpoints.

Each function takes plain values, does one job end to end (load, compute,
write), and returns a JSON-ready dict.  The service layer adds HTTP; the CLI
talks to the service.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .io_utils import write_metrics_jsonl, write_profile_csv
from .model import model_from_entries, reparam_model, spre_build_from_dense
from .reparam import verify_equivalence
from .sparsity import NMPattern, SparsityProfile, nm_project, spatial_sparsity
from .spre import SpReVariant
from .tensors import Mask4, Tensor4
from .training import TrainConfig, train

_DTYPES = {"f32": np.float32, "f64": np.float64}


def run_train(
    config: TrainConfig,
    checkpoint_out: str | None = None,
    metrics_out: str | None = None,
    profiles_out: str | None = None,
) -> dict:
    """Train a model per config; optionally write checkpoint/metrics/profiles."""
    model, metrics = train(config)
    if checkpoint_out:
        save_checkpoint(checkpoint_out, model.to_entries())
    if metrics_out:
        write_metrics_jsonl(metrics_out, metrics.jsonl_records())
    if profiles_out:
        write_profile_csv(profiles_out, list(metrics.profiles[-1].values()))
    return {
        "final_val_acc": metrics.final_val_acc,
        "final_train_acc": metrics.final_train_acc,
        "epochs_run": len(metrics.records),
        "checkpoint": checkpoint_out,
        "metrics": metrics_out,
        "profiles": profiles_out,
    }


def run_profile(checkpoint: str, out: str) -> dict:
    """Write the spatial sparsity CSV for every 4-d mask in a checkpoint."""
    entries = load_checkpoint(checkpoint)
    profiles: list[SparsityProfile] = []
    for name, arr in entries.items():
        if arr.dtype == np.uint8 and arr.ndim == 4:
            profiles.append(spatial_sparsity(Mask4(arr), name))
    rows = write_profile_csv(out, profiles)
    return {"out": out, "layers": [p.layer_name for p in profiles], "rows": rows}


def run_project(checkpoint: str, n: int, m: int, out: str) -> dict:
    """Attach an n:m mask to every eligible conv weight of a checkpoint.

    Eligible entries are 4-d float tensors named ``<layer>.w`` whose input
    channel count is divisible by m.  Each gains a ``<layer>.mask`` entry
    right after it (replacing any existing one); everything else is copied
    through unchanged.
    """
    pattern = NMPattern(n, m)
    entries = load_checkpoint(checkpoint)
    out_entries: dict[str, np.ndarray] = {}
    projected: list[str] = []
    for name, arr in entries.items():
        out_entries[name] = arr
        if (
            name.endswith(".w")
            and arr.ndim == 4
            and arr.dtype in (np.float32, np.float64)
            and arr.shape[1] % m == 0
        ):
            layer = name[: -len(".w")]
            mask = nm_project(Tensor4(arr), pattern, layer)
            out_entries.pop(f"{layer}.mask", None)
            out_entries[f"{layer}.mask"] = mask.data
            projected.append(layer)
    save_checkpoint(out, out_entries)
    return {"out": out, "layers": projected, "pattern": f"{n}:{m}"}


def run_spre_build(checkpoint: str, n: int, m: int, variant: str, out: str) -> dict:
    """Wrap a dense model checkpoint's stage convs into two-branch units."""
    entries = load_checkpoint(checkpoint)
    model = model_from_entries(entries)
    layers = [u.name for u in model.units[1:] if u.kind == "dense"]
    if not layers:
        raise ConfigError("checkpoint has no dense stage convs to convert")
    built = spre_build_from_dense(model, NMPattern(n, m), variant=SpReVariant(variant))
    save_checkpoint(out, built.to_entries())
    return {"out": out, "layers": layers, "pattern": f"{n}:{m}", "variant": variant}


def run_reparam(checkpoint: str, out: str) -> dict:
    """Merge every two-branch unit of a model checkpoint into single convs."""
    entries = load_checkpoint(checkpoint)
    model = model_from_entries(entries)
    merged = reparam_model(model)
    save_checkpoint(out, merged.to_entries())
    layers = [u.name for u in merged.units if u.kind == "merged"]
    return {"out": out, "layers": layers}


def run_verify(
    checkpoint_two_branch: str,
    checkpoint_merged: str,
    trials: int = 100,
    tolerance: float = 1e-10,
    seed: int = 0,
    dtype: str = "f64",
) -> dict:
    """Compare each two-branch block against its merged layer on random inputs."""
    if trials < 0:
        raise ConfigError(f"trials must be >= 0, got {trials}")
    if dtype not in _DTYPES:
        raise ConfigError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    two = model_from_entries(load_checkpoint(checkpoint_two_branch))
    merged = model_from_entries(load_checkpoint(checkpoint_merged))
    merged_units = {u.name: u for u in merged.units if u.kind == "merged"}

    layer_reports: dict[str, dict] = {}
    max_diff = 0.0
    all_passed = True
    for unit in two.units:
        if unit.kind != "spre":
            continue
        partner = merged_units.get(unit.name)
        if partner is None:
            raise ConfigError(
                f"merged checkpoint has no layer {unit.name!r} matching the two-branch model"
            )
        report = verify_equivalence(
            unit.block,
            partner.merged,
            trials=trials,
            tolerance=tolerance,
            dtype=_DTYPES[dtype],
            seed=seed,
        )
        layer_reports[unit.name] = report.to_dict()
        max_diff = max(max_diff, report.max_abs_diff)
        all_passed = all_passed and report.passed
    if not layer_reports:
        raise ConfigError("two-branch checkpoint contains no two-branch layers to verify")
    return {
        "trials": trials,
        "tolerance": tolerance,
        "dtype": dtype,
        "max_abs_diff": max_diff,
        "passed": all_passed,
        "layers": layer_reports,
    }
