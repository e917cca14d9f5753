"""Core dataset types and the KCD1 activation-dump format.

A dump is the only thing the toolkit needs from a host model: per-example
losses plus the hidden representations of each example at every layer of
interest.  Activations and losses are stored as little-endian float32 on
disk and in memory; all numerical routines widen to float64 on entry.
Datasets are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

MAGIC = b"KCD1"
ZERO_TOL_DEFAULT = 1e-12

FAMILIES = ("encoder_only", "decoder_only", "encoder_decoder", "other")
_FAMILY_TAG = {name: i for i, name in enumerate(FAMILIES)}

_METRIC_KINDS = ("lp", "cosine", "discrete")
_METRIC_TAG = {name: i for i, name in enumerate(_METRIC_KINDS)}


class KcontError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(KcontError):
    """A declared dataset invariant does not hold."""


class DumpError(KcontError):
    """Base class for dump read/write failures."""


class MalformedHeaderError(DumpError):
    pass


class TruncatedPayloadError(DumpError):
    pass


class LayerCountMismatchError(DumpError):
    pass


class NonFiniteValueError(DumpError):
    pass


class DimensionMismatchError(KcontError):
    pass


class ZeroVectorError(KcontError):
    """A cosine metric was applied to a vector with (near-)zero norm."""


class NoAdmissiblePairsError(KcontError):
    """Every candidate pair collided; the layer is degenerate for estimation."""


@dataclass(frozen=True)
class MetricSpec:
    """Distance attached to a layer.

    kind:  "lp" (param = p, math.inf selects the max norm), "cosine"
           (param ignored), or "discrete" (param = the constant c).
    zero_tol: distances below this are treated as collisions and skipped
           by every estimator.
    """

    kind: str
    param: float = 2.0
    zero_tol: float = ZERO_TOL_DEFAULT

    def __post_init__(self):
        if self.kind not in _METRIC_KINDS:
            raise ValidationError(f"unknown metric kind {self.kind!r}")
        if self.zero_tol <= 0:
            raise ValidationError("zero_tol must be > 0")
        if self.kind == "lp" and not (self.param >= 1.0):
            raise ValidationError(f"lp metric requires p >= 1, got {self.param}")
        if self.kind == "discrete" and not (self.param > 0.0 and math.isfinite(self.param)):
            raise ValidationError(f"discrete metric requires finite c > 0, got {self.param}")

    @classmethod
    def lp(cls, p: float = 2.0, zero_tol: float = ZERO_TOL_DEFAULT) -> "MetricSpec":
        return cls("lp", float(p), zero_tol)

    @classmethod
    def cosine(cls, zero_tol: float = ZERO_TOL_DEFAULT) -> "MetricSpec":
        return cls("cosine", 0.0, zero_tol)

    @classmethod
    def discrete(cls, c: float, zero_tol: float = ZERO_TOL_DEFAULT) -> "MetricSpec":
        return cls("discrete", float(c), zero_tol)


@dataclass(frozen=True)
class ModelMeta:
    model_id: str
    family: str = "other"
    param_count: int = 1
    notes: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.param_count < 1:
            raise ValidationError("param_count must be >= 1")


@dataclass(frozen=True, eq=False)
class LayerBlock:
    """All n representation vectors of one layer plus its metric.

    index is 1-based: index k identifies the k-th hidden layer.
    """

    index: int
    dim: int
    vectors: np.ndarray  # (n, dim) float32, read-only
    metric: MetricSpec

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(f"layer index must be >= 1, got {self.index}")
        if self.dim < 1:
            raise ValidationError(f"layer dim must be >= 1, got {self.dim}")
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] != self.dim:
            raise ValidationError(
                f"layer {self.index}: vectors must be (n, {self.dim}), got {v.shape}"
            )
        if not np.isfinite(v).all():
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(
                f"layer {self.index}: non-finite activation at example {bad[0]}, component {bad[1]}"
            )
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayerBlock):
            return NotImplemented
        return (
            self.index == other.index
            and self.dim == other.dim
            and self.metric == other.metric
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True, eq=False)
class ActivationDataset:
    """n examples traced through L layers, each with a per-example loss."""

    layers: tuple
    losses: np.ndarray  # (n,) float32, read-only
    labels: Optional[np.ndarray] = None  # (n,) int64 in [0, 2^32), or None
    meta: ModelMeta = field(default_factory=lambda: ModelMeta("unknown"))

    def __post_init__(self):
        losses = np.ascontiguousarray(self.losses, dtype=np.float32)
        if losses.ndim != 1 or losses.shape[0] < 1:
            raise ValidationError("losses must be a nonempty 1-d array")
        if not np.isfinite(losses).all():
            bad = int(np.argwhere(~np.isfinite(losses))[0][0])
            raise ValidationError(f"non-finite loss at example {bad}")
        if (losses < 0).any():
            bad = int(np.argwhere(losses < 0)[0][0])
            raise ValidationError(f"negative loss at example {bad}")
        losses.flags.writeable = False
        object.__setattr__(self, "losses", losses)

        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("dataset must have at least one layer")
        n = losses.shape[0]
        for pos, block in enumerate(layers, start=1):
            if not isinstance(block, LayerBlock):
                raise ValidationError("layers must contain LayerBlock instances")
            if block.index != pos:
                raise ValidationError(
                    f"layer indices must be contiguous 1..L; position {pos} holds index {block.index}"
                )
            if block.n != n:
                raise ValidationError(
                    f"layer {block.index} holds {block.n} vectors but dataset has {n} examples"
                )
        object.__setattr__(self, "layers", layers)

        if self.labels is not None:
            labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValidationError(f"labels must have shape ({n},), got {labels.shape}")
            if (labels < 0).any() or (labels >= 2**32).any():
                raise ValidationError("labels must fit in an unsigned 32-bit integer")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.losses.shape[0])

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def layer(self, k: int) -> LayerBlock:
        if not 1 <= k <= self.num_layers:
            raise ValidationError(
                f"layer index {k} out of range; valid range is 1..{self.num_layers}"
            )
        return self.layers[k - 1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationDataset):
            return NotImplemented
        if self.meta != other.meta or len(self.layers) != len(other.layers):
            return False
        if not np.array_equal(self.losses, other.losses):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return all(a == b for a, b in zip(self.layers, other.layers))


@dataclass(frozen=True)
class VolatilityEstimate:
    """A volatility value for one layer plus its sampling metadata."""

    layer: int
    value: float
    mode: str  # "exact" or "monte_carlo"
    m: int
    seed: Optional[int]
    included_pairs: int
    skipped_pairs: int

    def __post_init__(self):
        if self.mode not in ("exact", "monte_carlo"):
            raise ValidationError(f"unknown estimate mode {self.mode!r}")
        if self.value < 0:
            raise ValidationError("volatility must be nonnegative")
        examined = self.m * (self.m - 1)
        if self.included_pairs + self.skipped_pairs != examined:
            raise ValidationError(
                f"pair accounting broken: {self.included_pairs}+{self.skipped_pairs} != {examined}"
            )


# ---------------------------------------------------------------------------
# Binary dump I/O
#
# Layout (little-endian):
#   magic "KCD1"
#   u32 n, u32 L, u8 has_labels
#   per layer: u32 dim, u8 metric_kind, f64 metric_param
#   meta: u32 len + model_id bytes, u8 family_tag, u64 param_count,
#         u32 len + notes bytes
#   per example: u64 example_id, f32 loss, [u32 label],
#                then layer 1..L vectors as f32
# ---------------------------------------------------------------------------

_LP_INF_SENTINEL = float("inf")  # stored directly; IEEE +inf selects the max norm


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str, exc=MalformedHeaderError) -> bytes:
        if self.pos + count > len(self.data):
            raise exc(
                f"unexpected end of file while reading {what} at byte offset {self.pos} "
                f"(needed {count} bytes, {len(self.data) - self.pos} remain)"
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str, what: str, exc=MalformedHeaderError):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what, exc))


def _check_metric_param(kind_tag: int, param: float, offset: int) -> MetricSpec:
    if kind_tag == _METRIC_TAG["lp"]:
        if math.isnan(param) or param < 1.0:
            raise MalformedHeaderError(
                f"invalid lp parameter {param!r} at byte offset {offset}"
            )
        return MetricSpec.lp(param)
    if kind_tag == _METRIC_TAG["cosine"]:
        return MetricSpec.cosine()
    if kind_tag == _METRIC_TAG["discrete"]:
        if not (param > 0 and math.isfinite(param)):
            raise MalformedHeaderError(
                f"invalid discrete-metric constant {param!r} at byte offset {offset}"
            )
        return MetricSpec.discrete(param)
    raise MalformedHeaderError(f"unknown metric tag {kind_tag} at byte offset {offset}")


def load_dump(path: Union[str, Path]) -> ActivationDataset:
    """Read and validate a KCD1 dump.

    Raises a distinct DumpError subclass for malformed headers, truncated
    payloads, layer-count mismatches (trailing bytes), and non-finite
    values; messages carry byte offsets and record indices.
    """
    data = Path(path).read_bytes()
    r = _Reader(data)

    if r.take(4, "magic") != MAGIC:
        raise MalformedHeaderError(f"bad magic at byte offset 0; not a {MAGIC.decode()} dump")
    n, length = r.unpack("<II", "example/layer counts")
    (has_labels,) = r.unpack("<B", "label flag")
    if n == 0:
        raise MalformedHeaderError("header declares n=0; datasets must be nonempty")
    if length == 0:
        raise MalformedHeaderError("header declares L=0; datasets must have at least one layer")
    if has_labels not in (0, 1):
        raise MalformedHeaderError(f"label flag must be 0 or 1, got {has_labels}")

    dims: list[int] = []
    metrics: list[MetricSpec] = []
    for k in range(1, length + 1):
        offset = r.pos
        dim, kind_tag = r.unpack("<IB", f"layer {k} descriptor")
        (param,) = r.unpack("<d", f"layer {k} metric parameter")
        if dim == 0:
            raise MalformedHeaderError(f"layer {k} declares dim=0 at byte offset {offset}")
        dims.append(dim)
        metrics.append(_check_metric_param(kind_tag, param, offset))

    def read_str(what: str) -> str:
        (size,) = r.unpack("<I", f"{what} length")
        raw = r.take(size, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedHeaderError(f"{what} is not valid UTF-8: {e}") from None

    model_id = read_str("model_id")
    (family_tag,) = r.unpack("<B", "family tag")
    if family_tag >= len(FAMILIES):
        raise MalformedHeaderError(f"unknown family tag {family_tag}")
    (param_count,) = r.unpack("<Q", "param_count")
    if param_count == 0:
        raise MalformedHeaderError("param_count must be >= 1")
    notes = read_str("notes")
    meta = ModelMeta(model_id, FAMILIES[family_tag], param_count, notes)

    losses = np.empty(n, dtype=np.float32)
    labels = np.empty(n, dtype=np.int64) if has_labels else None
    layer_arrays = [np.empty((n, d), dtype=np.float32) for d in dims]

    for i in range(n):
        record_at = r.pos
        try:
            r.unpack("<Q", f"example_id of record {i}", TruncatedPayloadError)
            (loss,) = r.unpack("<f", f"loss of record {i}", TruncatedPayloadError)
            losses[i] = loss
            if has_labels:
                (label,) = r.unpack("<I", f"label of record {i}", TruncatedPayloadError)
                labels[i] = label
            for k, d in enumerate(dims):
                raw = r.take(4 * d, f"layer {k + 1} vector of record {i}", TruncatedPayloadError)
                layer_arrays[k][i] = np.frombuffer(raw, dtype="<f4")
        except TruncatedPayloadError as e:
            raise TruncatedPayloadError(
                f"payload truncated in record {i} (record starts at byte offset {record_at}): {e}"
            ) from None

    if r.pos != len(data):
        raise LayerCountMismatchError(
            f"{len(data) - r.pos} trailing bytes after record {n - 1} ending at byte offset "
            f"{r.pos}; header layer/example counts do not match the payload"
        )

    for k, arr in enumerate(layer_arrays, start=1):
        finite = np.isfinite(arr)
        if not finite.all():
            bad = np.argwhere(~finite)[0]
            raise NonFiniteValueError(
                f"non-finite activation in layer {k}, example {bad[0]}, component {bad[1]}"
            )
    finite_losses = np.isfinite(losses)
    if not finite_losses.all():
        bad = int(np.argwhere(~finite_losses)[0][0])
        raise NonFiniteValueError(f"non-finite loss in example {bad}")

    blocks = tuple(
        LayerBlock(index=k, dim=dims[k - 1], vectors=layer_arrays[k - 1], metric=metrics[k - 1])
        for k in range(1, length + 1)
    )
    return ActivationDataset(layers=blocks, losses=losses, labels=labels, meta=meta)


def write_dump(
    dataset: ActivationDataset,
    path: Union[str, Path],
    manifest: Optional[Mapping[str, str]] = None,
) -> None:
    """Write ``dataset`` to ``path`` in KCD1 form.

    ``load_dump(write_dump(dataset))`` reproduces the dataset bit-exactly.
    If ``manifest`` is given, a sidecar ``<path>.manifest`` with sorted
    key=value lines records provenance; nothing time-dependent is added.
    """
    path = Path(path)
    parts: list[bytes] = [MAGIC]
    has_labels = 1 if dataset.labels is not None else 0
    parts.append(struct.pack("<IIB", dataset.n, dataset.num_layers, has_labels))
    for block in dataset.layers:
        param = block.metric.param if block.metric.kind != "cosine" else 0.0
        parts.append(
            struct.pack("<IBd", block.dim, _METRIC_TAG[block.metric.kind], float(param))
        )

    def packed_str(s: str) -> bytes:
        raw = s.encode("utf-8")
        return struct.pack("<I", len(raw)) + raw

    parts.append(packed_str(dataset.meta.model_id))
    parts.append(struct.pack("<B", _FAMILY_TAG[dataset.meta.family]))
    parts.append(struct.pack("<Q", dataset.meta.param_count))
    parts.append(packed_str(dataset.meta.notes))

    loss_bytes = dataset.losses.astype("<f4", copy=False)
    label_arr = dataset.labels
    for i in range(dataset.n):
        parts.append(struct.pack("<Q", i))
        parts.append(struct.pack("<f", float(loss_bytes[i])))
        if has_labels:
            parts.append(struct.pack("<I", int(label_arr[i])))
        for block in dataset.layers:
            parts.append(block.vectors[i].astype("<f4", copy=False).tobytes())

    path.write_bytes(b"".join(parts))

    if manifest is not None:
        lines = []
        for key in sorted(manifest):
            value = str(manifest[key])
            if "\n" in key or "\n" in value or "=" in key:
                raise ValidationError(f"manifest entry {key!r} contains a forbidden character")
            lines.append(f"{key}={value}\n")
        Path(str(path) + ".manifest").write_text("".join(lines), encoding="utf-8")


def read_manifest(path: Union[str, Path]) -> dict[str, str]:
    """Parse a sidecar manifest written by write_dump."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"manifest line {lineno} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out
