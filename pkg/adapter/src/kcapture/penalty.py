"""Differentiable volatility penalty for host training loops.

Given a batch's per-example losses, one layer's activations, and an
explicit index subset, the penalty is the pairwise |loss difference| /
distance sum over the subset, with colliding pairs skipped.  Sampling the
subset is deliberately the caller's job: passing the same index list to
this function and to the analysis toolkit's estimator must produce the
same number.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch

from .dumpio import MetricDecl


def _pairwise_distances(acts: torch.Tensor, metric: MetricDecl) -> torch.Tensor:
    """Full m x m distance matrix (no autograd; used to find collisions)."""
    diff = acts.unsqueeze(1) - acts.unsqueeze(0)
    if metric.kind == "lp":
        if math.isinf(metric.param):
            return diff.abs().amax(dim=-1)
        if metric.param == 1.0:
            return diff.abs().sum(dim=-1)
        if metric.param == 2.0:
            return (diff * diff).sum(dim=-1).clamp_min(0).sqrt()
        return diff.abs().pow(metric.param).sum(dim=-1).pow(1.0 / metric.param)
    if metric.kind == "cosine":
        norms = acts.norm(dim=-1)
        if bool((norms <= metric.zero_tol).any()):
            raise ValueError("cosine metric undefined for (near-)zero vectors")
        cos = (acts @ acts.T) / (norms.unsqueeze(1) * norms.unsqueeze(0))
        return (1.0 - cos).clamp_min(0.0)
    # discrete: distance carries no gradient
    equal = (acts.unsqueeze(1) == acts.unsqueeze(0)).all(dim=-1)
    zero = torch.zeros((), dtype=acts.dtype, device=acts.device)
    c = torch.full((), metric.param, dtype=acts.dtype, device=acts.device)
    return torch.where(equal, zero, c)


def _selected_distances(a: torch.Tensor, b: torch.Tensor, metric: MetricDecl) -> torch.Tensor:
    """Rowwise distances for admissible pairs only.

    Every pair here has distance >= zero_tol, so sqrt/pow backward stays
    finite; computing the full matrix under autograd would feed zeros into
    sqrt on the diagonal and poison the graph with NaNs.
    """
    if metric.kind == "lp":
        diff = a - b
        if math.isinf(metric.param):
            return diff.abs().amax(dim=-1)
        if metric.param == 1.0:
            return diff.abs().sum(dim=-1)
        if metric.param == 2.0:
            return (diff * diff).sum(dim=-1).sqrt()
        return diff.abs().pow(metric.param).sum(dim=-1).pow(1.0 / metric.param)
    if metric.kind == "cosine":
        cos = (a * b).sum(dim=-1) / (a.norm(dim=-1) * b.norm(dim=-1))
        return (1.0 - cos).clamp_min(0.0)
    return torch.full((a.shape[0],), metric.param, dtype=a.dtype, device=a.device)


def kcreg_penalty(
    losses: torch.Tensor,
    activations: torch.Tensor,
    indices: Sequence[int],
    metric: MetricDecl = MetricDecl(),
    normalize: str = "mean",
) -> torch.Tensor:
    """Volatility of the batch over ``indices``, as a differentiable scalar.

    normalize "mean" divides the pair sum by the number of included pairs
    (the estimator's convention); "pair_count_squared" divides by
    len(indices)**2 (the raw penalty convention).  Repeated indices are
    collisions and are skipped like any other colliding pair.
    """
    if normalize not in ("mean", "pair_count_squared"):
        raise ValueError(f"unknown normalize mode {normalize!r}")
    if losses.dim() != 1 or activations.dim() != 2:
        raise ValueError("losses must be (N,) and activations (N, D)")
    if losses.shape[0] != activations.shape[0]:
        raise ValueError("losses and activations disagree on batch size")
    if len(indices) < 2:
        raise ValueError("need at least two indices")
    idx = torch.as_tensor(list(indices), dtype=torch.long, device=losses.device)
    if bool((idx < 0).any()) or bool((idx >= losses.shape[0]).any()):
        raise ValueError("index out of range")

    sub_losses = losses[idx]
    sub_acts = activations[idx]
    with torch.no_grad():
        dmat = _pairwise_distances(sub_acts.detach(), metric)
    m = idx.shape[0]
    offdiag = ~torch.eye(m, dtype=torch.bool, device=losses.device)
    admissible = (dmat >= metric.zero_tol) & offdiag
    included = int(admissible.sum().item())
    if included == 0:
        raise ValueError(f"all {m * (m - 1)} ordered pairs collide; penalty undefined")

    pairs = admissible.nonzero(as_tuple=False)
    left, right = pairs[:, 0], pairs[:, 1]
    d_sel = _selected_distances(sub_acts[left], sub_acts[right], metric)
    ldiff = (sub_losses[left] - sub_losses[right]).abs()
    total = (ldiff / d_sel).sum()
    if normalize == "mean":
        return total / included
    return total / (m * m)
