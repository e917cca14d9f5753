"""Pointwise and expected volatility of a layer's representations.

The volatility of an example is the mean, over admissible partners, of
|loss difference| / representation distance.  Pairs whose distance falls
below the layer's zero_tol are collisions and are excluded, as is the
diagonal; the mean is taken over the included ordered pairs and skip
counts are surfaced so callers can detect degenerate layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .datamodel import (
    ActivationDataset,
    KcontError,
    LayerBlock,
    NoAdmissiblePairsError,
    ValidationError,
    VolatilityEstimate,
)
from .rng import SplitMix64

_MAX_RESAMPLE_ATTEMPTS = 10


@dataclass(frozen=True)
class PointVolatility:
    """Volatility of one example at one layer.

    When the example's own loss is positive the mean decomposes into a
    sparsity factor (inverse distance to partners) and a loss-variation
    factor (relative loss change); both are reported as None otherwise,
    since the rewriting divides by the example's loss.
    """

    example: int
    layer: int
    sigma: float
    sparsity_term: Optional[float]
    variation_term: Optional[float]


@dataclass(frozen=True)
class ProfileEntry:
    layer: int
    relative_depth: float
    estimate: VolatilityEstimate


@dataclass(frozen=True)
class LayerProfile:
    entries: tuple

    def values(self) -> list[float]:
        return [e.estimate.value for e in self.entries]


def _pair_ratio_mean(
    losses: np.ndarray, dmat: np.ndarray, zero_tol: float
) -> tuple[float, int, int]:
    """Mean of |loss_i - loss_j| / d_ij over admissible ordered pairs.

    Returns (mean, included, skipped); pair enumeration is row-major so
    the summation order is fixed.
    """
    m = losses.shape[0]
    admissible = dmat >= zero_tol
    np.fill_diagonal(admissible, False)
    total_offdiag = m * (m - 1)
    included = int(admissible.sum())
    skipped = total_offdiag - included
    if included == 0:
        return 0.0, 0, skipped
    diff = np.abs(losses[:, None] - losses[None, :])
    d_sel = dmat[admissible]
    diff_sel = diff[admissible]
    # Constant-distance layers (e.g. the discrete metric) divide once, so
    # rescaling the metric rescales the value exactly.
    d0 = d_sel[0]
    if np.all(d_sel == d0):
        value = float(np.sum(diff_sel) / included / d0)
    else:
        value = float(np.sum(diff_sel / d_sel) / included)
    return value, included, skipped


def _subset_block(block: LayerBlock, indices: Sequence[int]) -> LayerBlock:
    idx = np.asarray(indices, dtype=np.intp)
    return LayerBlock(
        index=block.index,
        dim=block.dim,
        vectors=block.vectors[idx],
        metric=block.metric,
    )


def subset_volatility(
    dataset: ActivationDataset, k: int, indices: Sequence[int]
) -> tuple[float, int, int]:
    """Volatility over an explicit index list (repeats allowed).

    Exposed so external implementations of the penalty can be validated
    against this estimator on identical inputs.  Returns
    (value, included_pairs, skipped_pairs).
    """
    if len(indices) < 2:
        raise ValidationError("need at least two indices")
    block = dataset.layer(k)
    losses = dataset.losses.astype(np.float64)[np.asarray(indices, dtype=np.intp)]
    dmat = metrics.pairwise(_subset_block(block, indices)).entries
    value, included, skipped = _pair_ratio_mean(losses, dmat, block.metric.zero_tol)
    if included == 0:
        raise NoAdmissiblePairsError(
            f"layer {k}: all {skipped} ordered pairs in the index set collide"
        )
    return value, included, skipped


def point_volatility(dataset: ActivationDataset, k: int, i: int) -> PointVolatility:
    """Volatility of example ``i`` at layer ``k`` with its decomposition."""
    block = dataset.layer(k)
    n = dataset.n
    if not 0 <= i < n:
        raise ValidationError(f"example index {i} out of range; valid range is 0..{n - 1}")
    if n < 2:
        raise NoAdmissiblePairsError("dataset has a single example; no partners exist")

    losses = dataset.losses.astype(np.float64)
    dmat = metrics.pairwise(block).entries
    row = dmat[i]
    mask = row >= block.metric.zero_tol
    mask[i] = False
    count = int(mask.sum())
    if count == 0:
        raise NoAdmissiblePairsError(
            f"layer {k}: every partner of example {i} collides with it"
        )

    d = row[mask]
    ldiff = np.abs(losses[i] - losses[mask])
    if np.all(d == d[0]):
        sigma = float(np.sum(ldiff) / count / d[0])
    else:
        sigma = float(np.sum(ldiff / d) / count)

    own = losses[i]
    if own > 0.0:
        sparsity = float(np.sum(1.0 / d) / count)
        variation = float(np.sum(np.abs(1.0 - losses[mask] / own)) / count)
    else:
        sparsity = None
        variation = None
    return PointVolatility(
        example=i, layer=k, sigma=sigma, sparsity_term=sparsity, variation_term=variation
    )


def expected_volatility_exact(dataset: ActivationDataset, k: int) -> VolatilityEstimate:
    """Mean volatility over all admissible ordered pairs of the dataset."""
    block = dataset.layer(k)
    n = dataset.n
    if n < 2:
        raise NoAdmissiblePairsError("need at least two examples")
    losses = dataset.losses.astype(np.float64)
    dmat = metrics.pairwise(block).entries
    value, included, skipped = _pair_ratio_mean(losses, dmat, block.metric.zero_tol)
    if included == 0:
        raise NoAdmissiblePairsError(f"layer {k}: all ordered pairs collide")
    return VolatilityEstimate(
        layer=k,
        value=value,
        mode="exact",
        m=n,
        seed=None,
        included_pairs=included,
        skipped_pairs=skipped,
    )


def est_k_vol(dataset: ActivationDataset, k: int, m: int, seed: int) -> VolatilityEstimate:
    """Monte-Carlo volatility estimate from a uniform m-subset of examples.

    The subset is drawn without replacement from a SplitMix64 stream seeded
    with (seed XOR layer index), so estimates are reproducible bit-for-bit.
    A subset whose pairs all collide is redrawn a bounded number of times.
    """
    block = dataset.layer(k)
    n = dataset.n
    if not 2 <= m <= n:
        raise ValidationError(f"need 2 <= m <= n, got m={m}, n={n}")

    losses = dataset.losses.astype(np.float64)
    rng = SplitMix64(seed ^ k)
    attempts = _MAX_RESAMPLE_ATTEMPTS if m < n else 1
    skipped = 0
    for _ in range(attempts):
        indices = rng.sample_without_replacement(n, m)
        sub_losses = losses[np.asarray(indices, dtype=np.intp)]
        dmat = metrics.pairwise(_subset_block(block, indices)).entries
        value, included, skipped = _pair_ratio_mean(sub_losses, dmat, block.metric.zero_tol)
        if included > 0:
            return VolatilityEstimate(
                layer=k,
                value=value,
                mode="monte_carlo",
                m=m,
                seed=seed,
                included_pairs=included,
                skipped_pairs=skipped,
            )
    raise NoAdmissiblePairsError(
        f"layer {k}: {attempts} subset draws of size {m} yielded no admissible pair"
    )


def layer_profile(
    dataset: ActivationDataset, m: Optional[int], seed: int
) -> LayerProfile:
    """One volatility estimate per layer with relative depths attached.

    ``m=None`` selects the exact oracle for every layer; otherwise each
    layer gets its own Monte-Carlo estimate (per-layer sub-streams are
    derived inside est_k_vol from the layer index).
    """
    total = dataset.num_layers
    entries = []
    for k in range(1, total + 1):
        try:
            if m is None:
                est = expected_volatility_exact(dataset, k)
            else:
                est = est_k_vol(dataset, k, m, seed)
        except KcontError as e:
            raise type(e)(f"layer {k}: {e}") from None
        entries.append(ProfileEntry(layer=k, relative_depth=k / total, estimate=est))
    return LayerProfile(entries=tuple(entries))
