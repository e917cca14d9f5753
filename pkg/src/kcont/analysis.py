"""Vulnerability-score regression and per-depth correlation diagnostics.

Links per-layer volatility profiles of a population of models to their
externally measured attack success rates: a ridge regression with
permutation feature importance, and binned correlations of volatility
with vulnerability across relative depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import ModelMeta, ValidationError
from .rng import SplitMix64, derive_seed
from .volatility import LayerProfile


@dataclass(frozen=True)
class ModelRecord:
    meta: ModelMeta
    profile: LayerProfile
    attack_success_rate: float

    def __post_init__(self):
        if not self.profile.entries:
            raise ValidationError("profile must be nonempty")
        if not 0.0 <= self.attack_success_rate <= 1.0:
            raise ValidationError("attack_success_rate must lie in [0, 1]")


@dataclass(frozen=True)
class RegressionReport:
    feature_names: tuple
    coefficients: np.ndarray
    intercept: float
    r2: float
    permutation_delta_r2: Optional[np.ndarray] = None
    n_permutations: int = 0
    seed: Optional[int] = None


@dataclass(frozen=True)
class BinCorrelation:
    bin_index: int
    depth_lo: float
    depth_hi: float
    correlation: float  # NaN when undefined
    n_models: int


def vulnerability_score(profile: LayerProfile) -> float:
    """Arithmetic mean of the per-layer volatility values."""
    values = profile.values()
    return float(sum(values) / len(values))


def attack_success_rate(correct_mask: np.ndarray, adversarial_flip_mask: np.ndarray) -> float:
    """Fraction of correctly classified examples flipped by the attack."""
    correct = np.asarray(correct_mask, dtype=bool)
    flipped = np.asarray(adversarial_flip_mask, dtype=bool)
    if correct.shape != flipped.shape:
        raise ValidationError("masks must have identical shapes")
    total = int(correct.sum())
    if total == 0:
        raise ValidationError("no correctly classified examples; rate undefined")
    return float(np.logical_and(correct, flipped).sum() / total)


def feature_rows(records: Sequence[ModelRecord]) -> tuple[np.ndarray, tuple]:
    """Design matrix used by the vulnerability regression.

    Columns: one-hot family indicators (encoder_only, decoder_only,
    encoder_decoder), log(param_count), mean volatility.
    """
    names = ("encoder_only", "decoder_only", "encoder_decoder", "log_param_count", "mean_volatility")
    rows = np.zeros((len(records), len(names)), dtype=np.float64)
    for r, rec in enumerate(records):
        fam = rec.meta.family
        if fam in names[:3]:
            rows[r, names.index(fam)] = 1.0
        rows[r, 3] = math.log(rec.meta.param_count)
        rows[r, 4] = vulnerability_score(rec.profile)
    return rows, names


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)  # constant columns stay zero after centering
    return (x - mu) / sd, mu, sd


def ridge_regress(
    features: np.ndarray, targets: np.ndarray, alpha: float = 1.0
) -> RegressionReport:
    """Ridge fit with internally standardized columns and a free intercept.

    Coefficients are reported on the original feature scale; r2 is computed
    on the training data, with the convention r2 := 0 when the targets are
    constant.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: features {x.shape}, targets {y.shape}")
    if x.shape[0] < 2 or x.shape[1] < 1:
        raise ValidationError("need at least two rows and one feature")
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")

    xs, mu, sd = _standardize(x)
    y_mean = float(y.mean())
    yc = y - y_mean
    gram = xs.T @ xs + alpha * np.eye(x.shape[1])
    try:
        beta_s = np.linalg.solve(gram, xs.T @ yc)
    except np.linalg.LinAlgError:
        raise ValidationError(
            "normal equations are singular; the design is rank-deficient and alpha=0"
        ) from None

    coef = beta_s / sd
    intercept = y_mean - float(coef @ mu)
    pred = x @ coef + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum(yc**2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    names = tuple(f"x{j}" for j in range(x.shape[1]))
    return RegressionReport(feature_names=names, coefficients=coef, intercept=intercept, r2=r2)


def permutation_importance(
    features: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    n_perm: int,
    seed: int,
) -> np.ndarray:
    """Per-feature drop in training r2 when that column is permuted.

    For each feature, the column is shuffled n_perm times with its own
    derived stream and the model refit; delta_r2 = r2_base - mean(r2_perm).
    """
    if n_perm < 1:
        raise ValidationError(f"n_perm must be >= 1, got {n_perm}")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    base = ridge_regress(x, y, alpha).r2
    n, d = x.shape
    delta = np.empty(d, dtype=np.float64)
    for f in range(d):
        scores = np.empty(n_perm, dtype=np.float64)
        for t in range(n_perm):
            order = list(range(n))
            SplitMix64(derive_seed(seed, f, t)).shuffle(order)
            permuted = x[order, f]
            if np.array_equal(permuted, x[:, f]):
                scores[t] = base  # no-op permutation, e.g. a constant column
                continue
            xp = x.copy()
            xp[:, f] = permuted
            scores[t] = ridge_regress(xp, y, alpha).r2
        if np.all(scores == base):
            delta[f] = 0.0  # pure no-op column; keep the zero exact
        else:
            delta[f] = base - float(scores.mean())
    return delta


def regression_report(
    features: np.ndarray,
    targets: np.ndarray,
    alpha: float = 1.0,
    n_perm: int = 100,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> RegressionReport:
    """Ridge fit plus permutation importances in one report."""
    base = ridge_regress(features, targets, alpha)
    delta = permutation_importance(features, targets, alpha, n_perm, seed)
    names = tuple(feature_names) if feature_names is not None else base.feature_names
    if len(names) != len(base.coefficients):
        raise ValidationError("feature_names length does not match the design matrix")
    return RegressionReport(
        feature_names=names,
        coefficients=base.coefficients,
        intercept=base.intercept,
        r2=base.r2,
        permutation_delta_r2=delta,
        n_permutations=n_perm,
        seed=seed,
    )


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 3:
        return math.nan
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(np.sum(ac * ac))
    vb = float(np.sum(bc * bc))
    if va == 0.0 or vb == 0.0:
        return math.nan
    return float(np.sum(ac * bc) / math.sqrt(va * vb))


def _ranks(a: np.ndarray) -> np.ndarray:
    """Average ranks (ties share the mean of their positions)."""
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def depth_correlation(
    records: Sequence[ModelRecord], bins: int = 9, method: str = "pearson"
) -> list[BinCorrelation]:
    """Correlation of binned layer volatility with attack success rate.

    Layers fall into ``bins`` equal partitions of relative depth (0, 1];
    each model contributes its within-bin mean volatility.  Bins with
    fewer than three contributing models, or without variance, report NaN.
    """
    if len(records) < 3:
        raise ValidationError("need at least 3 model records")
    if bins < 1:
        raise ValidationError("bins must be >= 1")
    if method not in ("pearson", "spearman"):
        raise ValidationError(f"unknown correlation method {method!r}")

    out = []
    for b in range(bins):
        lo, hi = b / bins, (b + 1) / bins
        eps_vals, rates = [], []
        for rec in records:
            in_bin = [
                e.estimate.value
                for e in rec.profile.entries
                if lo < e.relative_depth <= hi or (b == 0 and e.relative_depth <= hi)
            ]
            if in_bin:
                eps_vals.append(sum(in_bin) / len(in_bin))
                rates.append(rec.attack_success_rate)
        e = np.asarray(eps_vals)
        r = np.asarray(rates)
        if method == "spearman" and e.size >= 3:
            corr = _pearson(_ranks(e), _ranks(r))
        else:
            corr = _pearson(e, r)
        out.append(
            BinCorrelation(bin_index=b, depth_lo=lo, depth_hi=hi, correlation=corr, n_models=e.size)
        )
    return out
