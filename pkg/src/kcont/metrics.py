"""Distances and full pairwise distance matrices for a layer.

Row i of a pairwise matrix is produced by one fixed numpy expression over
the widened (float64) vectors, so the result is bit-identical no matter
how rows are distributed over workers.  The worker count is capped by the
KC_THREADS environment variable; it never changes the output.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datamodel import (
    DimensionMismatchError,
    LayerBlock,
    MetricSpec,
    ZeroVectorError,
)

_PARALLEL_MIN_ROWS = 256  # below this the pool overhead dominates


def worker_count() -> int:
    raw = os.environ.get("KC_THREADS", "")
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"KC_THREADS must be an integer, got {raw!r}") from None
        return max(1, cap)
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric distances of one layer plus its collision list.

    collisions holds every ordered pair (i, j), i != j, whose distance fell
    below the metric's zero_tol; estimators skip exactly these pairs.
    """

    layer: int
    n: int
    entries: np.ndarray  # (n, n) float64, read-only
    collisions: tuple


def distance(a: np.ndarray, b: np.ndarray, metric: MetricSpec) -> float:
    """Distance between two vectors under ``metric`` (computed in float64).

    Evaluates the same vectorized kernels as pairwise(), so scalar and
    matrix results agree bit-for-bit.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatchError(f"vector dims differ: {a.shape[0]} vs {b.shape[0]}")
    if np.array_equal(a, b):
        return 0.0
    v = np.stack([a, b])
    out = np.empty((2, 2), dtype=np.float64)
    if metric.kind == "lp":
        _lp_rows(v, metric, 0, 1, out)
    elif metric.kind == "cosine":
        norms = np.sqrt(np.sum(v * v, axis=1))
        if norms.min() <= metric.zero_tol:
            raise ZeroVectorError("cosine distance undefined for (near-)zero vectors")
        _cosine_rows(v, norms, 0, 1, out)
    else:
        # discrete: nonequal vectors (checked above) sit at distance c
        return metric.param
    return float(out[0, 1])


def _lp_rows(v: np.ndarray, metric: MetricSpec, lo: int, hi: int, out: np.ndarray) -> None:
    p = metric.param
    for i in range(lo, hi):
        diff = np.abs(v[i] - v)
        if math.isinf(p):
            out[i] = diff.max(axis=1)
        elif p == 1.0:
            out[i] = diff.sum(axis=1)
        elif p == 2.0:
            out[i] = np.sqrt(np.sum(diff * diff, axis=1))
        else:
            out[i] = np.sum(diff**p, axis=1) ** (1.0 / p)


def _cosine_rows(
    v: np.ndarray, norms: np.ndarray, lo: int, hi: int, out: np.ndarray
) -> None:
    for i in range(lo, hi):
        cos = np.sum(v * v[i], axis=1) / (norms * norms[i])
        row = 1.0 - cos
        np.maximum(row, 0.0, out=row)
        out[i] = row


def _discrete_rows(v: np.ndarray, c: float, lo: int, hi: int, out: np.ndarray) -> None:
    for i in range(lo, hi):
        out[i] = np.where((v == v[i]).all(axis=1), 0.0, c)


def _duplicate_groups(vectors: np.ndarray) -> list[np.ndarray]:
    """Groups of indices whose vectors are componentwise identical."""
    seen: dict[bytes, list[int]] = {}
    for i in range(vectors.shape[0]):
        seen.setdefault(vectors[i].tobytes(), []).append(i)
    return [np.asarray(g) for g in seen.values() if len(g) > 1]


def pairwise(block: LayerBlock) -> DistanceMatrix:
    """Full n x n distance matrix for ``block`` with collisions enumerated."""
    v = block.vectors.astype(np.float64)
    n = v.shape[0]
    metric = block.metric
    out = np.empty((n, n), dtype=np.float64)

    if metric.kind == "cosine":
        norms = np.sqrt(np.sum(v * v, axis=1))
        bad = np.argwhere(norms <= metric.zero_tol)
        if bad.size:
            raise ZeroVectorError(
                f"layer {block.index}: cosine metric but example {int(bad[0][0])} has "
                f"(near-)zero norm"
            )
        row_fn = lambda lo, hi: _cosine_rows(v, norms, lo, hi, out)
    elif metric.kind == "lp":
        row_fn = lambda lo, hi: _lp_rows(v, metric, lo, hi, out)
    else:
        row_fn = lambda lo, hi: _discrete_rows(v, metric.param, lo, hi, out)

    workers = worker_count()
    if workers > 1 and n >= _PARALLEL_MIN_ROWS:
        bounds = np.linspace(0, n, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(row_fn, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()
    else:
        row_fn(0, n)

    # d(x, x) = 0 by axiom; the cosine expression can leave ~1e-16 residue.
    np.fill_diagonal(out, 0.0)
    if metric.kind == "cosine":
        for group in _duplicate_groups(block.vectors):
            out[np.ix_(group, group)] = 0.0

    collide = out < metric.zero_tol
    np.fill_diagonal(collide, False)
    collisions = tuple((int(i), int(j)) for i, j in np.argwhere(collide))

    out.flags.writeable = False
    return DistanceMatrix(layer=block.index, n=n, entries=out, collisions=collisions)
