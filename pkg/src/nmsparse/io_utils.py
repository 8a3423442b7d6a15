"""Small text-format writers: sparsity CSV profiles and metrics JSONL."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Iterable, Sequence

from .sparsity import SparsityProfile


def _atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(prefix=os.path.basename(path) + ".", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def profiles_to_csv(profiles: Sequence[SparsityProfile]) -> str:
    """Render profiles as CSV with columns layer,u,v,spatial_sparsity."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "u", "v", "spatial_sparsity"])
    for profile in profiles:
        for layer, u, v, value in profile.rows():
            writer.writerow([layer, u, v, repr(value)])
    return buf.getvalue()


def write_profile_csv(path: str | os.PathLike, profiles: Sequence[SparsityProfile]) -> int:
    """Write the profile CSV; returns the number of data rows."""
    text = profiles_to_csv(profiles)
    _atomic_write_text(path, text)
    return sum(p.values.size for p in profiles)


def write_metrics_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> int:
    """Write one JSON object per line; returns the number of records."""
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    _atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)
