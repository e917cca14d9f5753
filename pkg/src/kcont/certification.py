"""Closed-form robustness bounds and the bootstrap certification procedure.

The bounds control the probability that a point within representation
distance delta of a reference set suffers an expected loss change above
eta, given an expected-volatility level for the layer.  The bounded-space
form needs a concentration denominator; below its validity threshold the
bound is vacuous (reported as 1, or as an explicitly vacuous certificate).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metrics
from .datamodel import (
    ActivationDataset,
    NoAdmissiblePairsError,
    ValidationError,
)
from .rng import SplitMix64, derive_seed
from .volatility import _pair_ratio_mean, _subset_block

# Threads only pay off once the per-resample numpy work (an n x n pairwise
# matrix) is large enough to release the GIL for most of the task.
_PARALLEL_MIN_POINTS = 512


@dataclass(frozen=True)
class Certificate:
    """Result of the test-time certification procedure for one layer.

    certified_prob lower-bounds the probability that points within
    representation distance delta of the reference sample keep their
    expected loss change at or below eta.  p_ref records the reference-set
    mass assumed by the sqrt(0.5*log(2n)) threshold (one point in n).
    """

    layer: int
    delta: float
    eta: float
    confidence: float
    k_boot: int
    seed: int
    b_hat: float
    eps_upper: float
    certified_prob: float
    vacuous: bool
    p_ref: float


# Acklam's rational approximation to the standard normal quantile
# (relative error < 1.15e-9 over (0, 1)).
_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ACKLAM_SPLIT = 0.02425


def std_normal_quantile(p: float) -> float:
    """Inverse standard normal CDF via Acklam's approximation."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"quantile argument must be in (0, 1), got {p}")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    if p < _ACKLAM_SPLIT:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    if p <= 1.0 - _ACKLAM_SPLIT:
        q = p - 0.5
        r = q * q
        return (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    q = math.sqrt(-2.0 * math.log(1.0 - p))
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
        (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
    )


def _threshold(b: float, p_a: float) -> float:
    """Radius below which the concentration step is uninformative."""
    return b * math.sqrt(0.5 * math.log(2.0 / p_a))


def mcdiarmid_tail(b: float, delta: float, p_a: float) -> float:
    """Tail mass left outside radius delta of a set of mass p_a.

    Valid only past the threshold b*sqrt(0.5*log(2/p_a)); returns 1 below
    it (the concentration inequality says nothing there).
    """
    if b <= 0 or delta <= 0:
        raise ValidationError("b and delta must be positive")
    if not 0.0 < p_a <= 1.0:
        raise ValidationError(f"p_a must be in (0, 1], got {p_a}")
    t = _threshold(b, p_a)
    if delta <= t:
        return 1.0
    return min(1.0, 2.0 * math.exp(-(2.0 / (b * b)) * (delta - t) ** 2))


def theorem_bound(eps: float, delta: float, eta: float, b: float, p_a: float) -> float:
    """Bounded-space conditional bound eps*delta / (eta*V).

    V = 1 - 2*exp(-(2/b^2)(delta - threshold)^2) is the two-sided
    concentration denominator; whenever the threshold condition fails or V
    is nonpositive, the bound is vacuous and 1 is returned.
    """
    if eps < 0:
        raise ValidationError("eps must be nonnegative")
    if delta <= 0 or eta <= 0 or b <= 0:
        raise ValidationError("delta, eta, b must be positive")
    if not 0.0 < p_a <= 1.0:
        raise ValidationError(f"p_a must be in (0, 1], got {p_a}")
    t = _threshold(b, p_a)
    if delta <= t:
        return 1.0
    v = 1.0 - 2.0 * math.exp(-(2.0 / (b * b)) * (delta - t) ** 2)
    if v <= 0.0:
        return 1.0
    return min(1.0, eps * delta / (eta * v))


def corollary_bound_unbounded(eps: float, delta: float, eta: float, p_a: float) -> float:
    """Unbounded-space form: eps*delta / (eta*(1 - p_a))."""
    if eps < 0 or delta < 0:
        raise ValidationError("eps and delta must be nonnegative")
    if eta <= 0:
        raise ValidationError("eta must be positive")
    if not 0.0 <= p_a < 1.0:
        raise ValidationError(f"p_a must be in [0, 1), got {p_a}")
    return min(1.0, eps * delta / (eta * (1.0 - p_a)))


def corollary_bound_zero_measure(eps: float, delta: float, eta: float) -> float:
    """Zero-reference-mass form: eps*delta / eta."""
    return corollary_bound_unbounded(eps, delta, eta, 0.0)


def _resample_volatility(
    dataset: ActivationDataset, j: int, losses64: np.ndarray, stream_seed: int
) -> float:
    """Exact volatility over one bootstrap resample; NaN when degenerate.

    Resamples contain duplicate indices, which are collisions by
    construction and get skipped like any other colliding pair.
    """
    n = dataset.n
    rng = SplitMix64(stream_seed)
    idx = rng.sample_with_replacement(n, n)
    block = dataset.layer(j)
    sub = metrics.pairwise(_subset_block(block, idx)).entries
    value, included, _ = _pair_ratio_mean(
        losses64[np.asarray(idx, dtype=np.intp)], sub, block.metric.zero_tol
    )
    if included == 0:
        return math.nan
    return value


def bootstrap_volatilities(
    dataset: ActivationDataset, j: int, k_boot: int, seed: int
) -> np.ndarray:
    """Exact volatilities of k_boot bootstrap resamples (NaN = degenerate).

    Each resample draws from its own SplitMix64 stream derived from
    (seed, resample index); aggregation order is by resample index, so the
    output is identical for any worker count.
    """
    if k_boot < 2:
        raise ValidationError(f"k_boot must be >= 2, got {k_boot}")
    losses64 = dataset.losses.astype(np.float64)
    out = np.empty(k_boot, dtype=np.float64)

    def run(lo: int, hi: int) -> None:
        for r in range(lo, hi):
            out[r] = _resample_volatility(dataset, j, losses64, derive_seed(seed, r))

    workers = metrics.worker_count()
    if workers > 1 and dataset.n >= _PARALLEL_MIN_POINTS and k_boot >= workers:
        bounds = np.linspace(0, k_boot, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()
    else:
        run(0, k_boot)
    return out


def upper_conf_bound(
    dataset: ActivationDataset, j: int, k_boot: int, confidence: float, seed: int
) -> float:
    """One-sided bootstrap upper confidence bound on expected volatility.

    mean + quantile(confidence) * std / sqrt(k_boot) over the resample
    volatilities (sample standard deviation).  Degenerate resamples are
    excluded; if every resample is degenerate the layer cannot be bounded.
    """
    if not 0.5 <= confidence < 1.0:
        raise ValidationError(f"confidence must be in [0.5, 1), got {confidence}")
    values = bootstrap_volatilities(dataset, j, k_boot, seed)
    good = values[~np.isnan(values)]
    if good.size == 0:
        raise NoAdmissiblePairsError(f"layer {j}: every bootstrap resample was degenerate")
    if good.size == 1:
        raise NoAdmissiblePairsError(
            f"layer {j}: only one non-degenerate resample; cannot form a confidence bound"
        )
    mean = float(np.mean(good))
    std = float(np.std(good, ddof=1))
    if confidence == 0.5:
        return mean
    return mean + std_normal_quantile(confidence) * std / math.sqrt(good.size)


def max_pairwise_distance(dataset: ActivationDataset, j: int) -> float:
    """Largest observed representation distance at layer j."""
    return float(metrics.pairwise(dataset.layer(j)).entries.max())


def certify(
    dataset: ActivationDataset,
    j: int,
    delta: float,
    eta: float,
    confidence: float = 0.95,
    k_boot: int = 100,
    seed: int = 0,
) -> Certificate:
    """Certify layer j of the dataset at radius delta and threshold eta.

    The validity threshold instantiates the reference-set mass as 1/n
    (one sample point); the concentration denominator here carries
    coefficient 1 on the exponential, matching the certification procedure
    rather than the proof-faithful factor-2 form used by theorem_bound.
    """
    if delta <= 0 or eta <= 0:
        raise ValidationError("delta and eta must be positive")
    losses = dataset.losses
    if eta <= 1.0 and ((losses < 0).any() or (losses > 1).any()):
        warnings.warn(
            "eta <= 1 reads as a 0-1-loss deviation but dataset losses leave [0, 1]; "
            "the certificate still bounds deviations of the stored loss",
            stacklevel=2,
        )

    eps_upper = upper_conf_bound(dataset, j, k_boot, confidence, seed)
    b_hat = max_pairwise_distance(dataset, j)
    if b_hat <= 0.0:
        raise NoAdmissiblePairsError(f"layer {j}: all representations collide (B=0)")
    return _assemble(
        dataset.n, j, delta, eta, confidence, k_boot, seed, b_hat, eps_upper
    )


def _assemble(n, j, delta, eta, confidence, k_boot, seed, b_hat, eps_upper) -> Certificate:
    t = b_hat * math.sqrt(0.5 * math.log(2.0 * n))
    vacuous = delta <= t
    certified = 0.0
    if not vacuous:
        v = eta * (1.0 - math.exp(-(2.0 / (b_hat * b_hat)) * (delta - t) ** 2))
        if v <= 0.0:
            vacuous = True
        else:
            certified = min(1.0, max(0.0, 1.0 - eps_upper * delta / v))
    return Certificate(
        layer=j,
        delta=delta,
        eta=eta,
        confidence=confidence,
        k_boot=k_boot,
        seed=seed,
        b_hat=b_hat,
        eps_upper=eps_upper,
        certified_prob=certified,
        vacuous=vacuous,
        p_ref=1.0 / n,
    )


def certify_grid(
    dataset: ActivationDataset,
    j: int,
    deltas,
    etas,
    confidence: float = 0.95,
    k_boot: int = 100,
    seed: int = 0,
) -> list:
    """Certificates for every (delta, eta) cell, bootstrapping only once.

    The upper confidence bound and observed diameter depend on the data
    alone; each cell is then arithmetic.  Cell order is row-major in
    (delta, eta).
    """
    first = certify(dataset, j, float(deltas[0]), float(etas[0]), confidence, k_boot, seed)
    out = []
    for delta in deltas:
        for eta in etas:
            if float(delta) <= 0 or float(eta) <= 0:
                raise ValidationError("delta and eta must be positive")
            out.append(
                _assemble(
                    dataset.n, j, float(delta), float(eta), confidence, k_boot,
                    seed, first.b_hat, first.eps_upper,
                )
            )
    return out
