import math

import numpy as np
import pytest

from kcont.analysis import (
    BinCorrelation,
    ModelRecord,
    attack_success_rate,
    depth_correlation,
    feature_rows,
    permutation_importance,
    regression_report,
    ridge_regress,
    vulnerability_score,
)
from kcont.datamodel import ModelMeta, ValidationError, VolatilityEstimate
from kcont.volatility import LayerProfile, ProfileEntry


def _profile(values):
    total = len(values)
    entries = tuple(
        ProfileEntry(
            layer=k,
            relative_depth=k / total,
            estimate=VolatilityEstimate(
                layer=k, value=v, mode="exact", m=4, seed=None,
                included_pairs=12, skipped_pairs=0,
            ),
        )
        for k, v in enumerate(values, start=1)
    )
    return LayerProfile(entries=entries)


def test_vulnerability_score_mean():
    assert vulnerability_score(_profile([1.0, 2.0, 3.0])) == 2.0
    assert vulnerability_score(_profile([0.7])) == 0.7
    assert vulnerability_score(_profile([0.0, 0.0])) == 0.0


def test_attack_success_rate():
    correct = np.array([1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0], dtype=bool)
    flips = np.zeros(12, dtype=bool)
    assert attack_success_rate(correct, flips) == 0.0
    flips[:3] = True
    assert attack_success_rate(correct, flips) == pytest.approx(0.3)
    assert attack_success_rate(correct, correct) == 1.0
    with pytest.raises(ValidationError):
        attack_success_rate(np.zeros(3, dtype=bool), np.zeros(3, dtype=bool))


def test_ridge_interpolates_exact_line():
    x = np.linspace(-2, 3, 40).reshape(-1, 1)
    y = 2.0 * x[:, 0]
    report = ridge_regress(x, y, alpha=0.0)
    assert report.coefficients[0] == pytest.approx(2.0, abs=1e-9)
    assert report.intercept == pytest.approx(0.0, abs=1e-9)
    assert report.r2 == pytest.approx(1.0, abs=1e-9)


def test_ridge_constant_targets_convention():
    x = np.random.default_rng(0).normal(size=(30, 3))
    y = np.full(30, 4.2)
    report = ridge_regress(x, y, alpha=1.0)
    assert np.allclose(report.coefficients, 0.0)
    assert report.r2 == 0.0
    assert report.intercept == pytest.approx(4.2)


def test_ridge_known_coefficients():
    rng = np.random.default_rng(42)
    n = 200
    x = rng.normal(size=(n, 2))
    y = 3.0 * x[:, 0] + rng.normal(0.0, 0.01, size=n)
    report = ridge_regress(x, y, alpha=1.0)
    assert abs(report.coefficients[0] - 3.0) / 3.0 < 0.05
    assert abs(report.coefficients[1]) < 0.05


def test_ridge_rescaling_consistency():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(50, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.1, 50)
    r1 = ridge_regress(x, y, alpha=1.0)
    x2 = x.copy()
    x2[:, 1] = x2[:, 1] * 100.0 + 7.0
    r2 = ridge_regress(x2, y, alpha=1.0)
    assert r2.r2 == pytest.approx(r1.r2, abs=1e-9)
    p1 = x @ r1.coefficients + r1.intercept
    p2 = x2 @ r2.coefficients + r2.intercept
    assert np.allclose(p1, p2, atol=1e-9)


def test_ridge_rank_deficient_without_penalty():
    x = np.ones((10, 2))
    x[:, 1] = x[:, 0]  # perfectly collinear constant columns
    y = np.arange(10.0)
    with pytest.raises(ValidationError, match="rank"):
        # constant columns are neutralized by standardization, so force
        # collinearity with duplicated informative columns instead
        x2 = np.random.default_rng(1).normal(size=(10, 1))
        ridge_regress(np.hstack([x2, x2]), y, alpha=0.0)


def test_permutation_importance_constant_feature_is_noop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 2))
    x[:, 1] = 5.0
    y = 2.0 * x[:, 0] + rng.normal(0, 0.05, 60)
    delta = permutation_importance(x, y, alpha=1.0, n_perm=10, seed=0)
    assert delta[1] == 0.0
    assert delta[0] > 0.5


def test_permutation_importance_separates_signal_from_noise():
    wins = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        x = rng.normal(size=(200, 2))
        y = 3.0 * x[:, 0] + rng.normal(0.0, 0.01, 200)
        delta = permutation_importance(x, y, alpha=1.0, n_perm=5, seed=trial)
        if delta[0] > delta[1]:
            wins += 1
    assert wins >= 95


def test_permutation_importance_noise_feature_near_zero():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(250, 2))
    y = 3.0 * x[:, 0] + rng.normal(0.0, 0.01, 250)
    delta = permutation_importance(x, y, alpha=1.0, n_perm=20, seed=1)
    assert abs(delta[1]) < 0.05


def test_permutation_importance_rejects_zero_perms():
    x = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(ValidationError):
        permutation_importance(x, x[:, 0], alpha=1.0, n_perm=0, seed=0)


def test_permutation_importance_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(40, 3))
    y = x @ np.array([1.0, 0.0, -1.0])
    a = permutation_importance(x, y, alpha=1.0, n_perm=7, seed=99)
    b = permutation_importance(x, y, alpha=1.0, n_perm=7, seed=99)
    assert np.array_equal(a, b)


def test_regression_report_wires_names():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 2))
    y = x[:, 0]
    report = regression_report(x, y, alpha=1.0, n_perm=3, seed=0, feature_names=["a", "b"])
    assert report.feature_names == ("a", "b")
    assert report.n_permutations == 3
    assert len(report.permutation_delta_r2) == 2


def _record(values, rate, family="other", params=1000):
    return ModelRecord(
        meta=ModelMeta("m", family, params),
        profile=_profile(values),
        attack_success_rate=rate,
    )


def test_feature_rows_schema():
    records = [
        _record([1.0, 2.0], 0.5, family="encoder_only", params=math.e**2),
        _record([3.0], 0.2, family="decoder_only", params=math.e**4),
    ]
    x, names = feature_rows(records)
    assert names == ("encoder_only", "decoder_only", "encoder_decoder", "log_param_count", "mean_volatility")
    assert np.allclose(x[0], [1, 0, 0, 2.0, 1.5], atol=1e-9)
    assert np.allclose(x[1], [0, 1, 0, 4.0, 3.0], atol=1e-9)


def test_depth_correlation_identical_rates_undefined():
    records = [_record([1.0, 2.0, 3.0], 0.5) for _ in range(4)]
    out = depth_correlation(records, bins=3)
    assert all(math.isnan(b.correlation) for b in out)
    assert all(b.n_models == 4 for b in out)


def test_depth_correlation_constructed_bin_signal():
    # nine-layer profiles; the layer landing in bin 7 of 9 tracks the rate
    records = []
    rng = np.random.default_rng(0)
    for i in range(12):
        rate = i / 11.0
        values = list(rng.uniform(0.5, 1.5, 9))
        values[7] = 5.0 * rate  # relative depth 8/9 -> bin 7
        records.append(_record(values, rate))
    out = depth_correlation(records, bins=9)
    assert out[7].correlation > 0.9
    assert out[7].n_models == 12


def test_depth_correlation_single_bin_collapses_to_score():
    rng = np.random.default_rng(1)
    records = [
        _record(list(rng.uniform(0, 1, 4)), rate)
        for rate in (0.1, 0.4, 0.8, 0.9, 0.2)
    ]
    out = depth_correlation(records, bins=1)
    assert len(out) == 1
    scores = np.array([vulnerability_score(r.profile) for r in records])
    rates = np.array([r.attack_success_rate for r in records])
    expected = np.corrcoef(scores, rates)[0, 1]
    assert out[0].correlation == pytest.approx(expected, rel=1e-9)


def test_depth_correlation_sparse_bins_undefined():
    # three models, single-layer profiles at depth 1.0: only the last bin
    # has contributions
    records = [_record([v], r) for v, r in ((1.0, 0.1), (2.0, 0.5), (3.0, 0.9))]
    out = depth_correlation(records, bins=4)
    assert all(math.isnan(b.correlation) for b in out[:-1])
    assert not math.isnan(out[-1].correlation)


def test_depth_correlation_needs_three_records():
    with pytest.raises(ValidationError):
        depth_correlation([_record([1.0], 0.1), _record([2.0], 0.2)])


def test_depth_correlation_spearman_flag():
    rng = np.random.default_rng(4)
    records = [_record(list(rng.uniform(0, 1, 3)), r) for r in np.linspace(0.1, 0.9, 6)]
    out = depth_correlation(records, bins=1, method="spearman")
    assert isinstance(out[0], BinCorrelation)
    assert -1.0 <= out[0].correlation <= 1.0
