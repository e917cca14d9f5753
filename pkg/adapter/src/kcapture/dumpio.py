"""Self-contained writer for the KCD1 activation-dump format.

The dump file is the only interface between this adapter and the analysis
toolkit, so the format is implemented here directly rather than imported.

Layout (little-endian):
  magic "KCD1"
  u32 n, u32 L, u8 has_labels
  per layer: u32 dim, u8 metric_kind, f64 metric_param
  meta: u32-length-prefixed model_id (UTF-8), u8 family_tag,
        u64 param_count, u32-length-prefixed notes (UTF-8)
  per example: u64 example_id, f32 loss, [u32 label],
               then layer 1..L vectors as f32

Tags: metric_kind 0=lp (param = p, +inf selects the max norm),
1=cosine, 2=discrete (param = c); family 0=encoder_only, 1=decoder_only,
2=encoder_decoder, 3=other.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

MAGIC = b"KCD1"

METRIC_TAGS = {"lp": 0, "cosine": 1, "discrete": 2}
FAMILY_TAGS = {"encoder_only": 0, "decoder_only": 1, "encoder_decoder": 2, "other": 3}


@dataclass(frozen=True)
class MetricDecl:
    """Metric assignment for a captured layer (mirrors the dump tag)."""

    kind: str = "lp"
    param: float = 2.0
    zero_tol: float = 1e-12

    def __post_init__(self):
        if self.kind not in METRIC_TAGS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "lp" and not self.param >= 1.0:
            raise ValueError(f"lp metric requires p >= 1, got {self.param}")
        if self.kind == "discrete" and not (self.param > 0 and math.isfinite(self.param)):
            raise ValueError(f"discrete metric requires finite c > 0, got {self.param}")
        if self.zero_tol <= 0:
            raise ValueError("zero_tol must be positive")


def write_kcd1(
    path: Union[str, Path],
    layer_vectors: Sequence[np.ndarray],
    metrics: Sequence[MetricDecl],
    losses: np.ndarray,
    labels: Optional[np.ndarray] = None,
    model_id: str = "captured",
    family: str = "other",
    param_count: int = 1,
    notes: str = "",
    manifest: Optional[Mapping[str, str]] = None,
) -> None:
    losses = np.ascontiguousarray(losses, dtype=np.float32)
    n = losses.shape[0]
    if n == 0:
        raise ValueError("cannot write an empty dump")
    if not np.isfinite(losses).all() or (losses < 0).any():
        raise ValueError("losses must be finite and nonnegative")
    if len(layer_vectors) == 0 or len(layer_vectors) != len(metrics):
        raise ValueError("need one metric per captured layer")
    arrays = []
    for k, vec in enumerate(layer_vectors, start=1):
        arr = np.ascontiguousarray(vec, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] != n or arr.shape[1] < 1:
            raise ValueError(f"layer {k}: expected ({n}, dim) array, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError(f"layer {k}: non-finite activation")
        arrays.append(arr)
    if family not in FAMILY_TAGS:
        raise ValueError(f"family must be one of {sorted(FAMILY_TAGS)}")
    if param_count < 1:
        raise ValueError("param_count must be >= 1")
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.shape != (n,) or (labels < 0).any() or (labels >= 2**32).any():
            raise ValueError("labels must be one u32-ranged value per example")

    parts = [MAGIC, struct.pack("<IIB", n, len(arrays), 0 if labels is None else 1)]
    for arr, metric in zip(arrays, metrics):
        param = metric.param if metric.kind != "cosine" else 0.0
        parts.append(struct.pack("<IBd", arr.shape[1], METRIC_TAGS[metric.kind], float(param)))

    def packed(s: str) -> bytes:
        raw = s.encode("utf-8")
        return struct.pack("<I", len(raw)) + raw

    parts.append(packed(model_id))
    parts.append(struct.pack("<B", FAMILY_TAGS[family]))
    parts.append(struct.pack("<Q", param_count))
    parts.append(packed(notes))

    for i in range(n):
        parts.append(struct.pack("<Qf", i, float(losses[i])))
        if labels is not None:
            parts.append(struct.pack("<I", int(labels[i])))
        for arr in arrays:
            parts.append(arr[i].tobytes())

    path = Path(path)
    path.write_bytes(b"".join(parts))
    if manifest is not None:
        lines = [f"{k}={manifest[k]}\n" for k in sorted(manifest)]
        Path(str(path) + ".manifest").write_text("".join(lines), encoding="utf-8")
