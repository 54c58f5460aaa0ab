import itertools

import numpy as np
import pytest

from ccg_bench.errors import InvalidArgumentError, UndefinedMetricError
from ccg_bench.metrics import (
    MetricOptions,
    MetricReport,
    ScoredSeries,
    aggregate_seeds,
    auc,
    best_f1,
    buffered_labels,
    evaluate_scores,
    label_segments,
    pa_best_f1,
    point_adjust,
    vus,
)


def _segments_labels(n=1000, n_segments=10, length=50, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=int)
    slots = rng.choice(n // (2 * length), size=n_segments, replace=False)
    for s in slots:
        labels[s * 2 * length: s * 2 * length + length] = 1
    return labels


def _brute_force_weighted_auc(scores, weights):
    """Pairwise Mann-Whitney: point i is a positive of weight w_i and a negative of weight 1 - w_i"""
    negatives = 1.0 - weights
    num = 0.0
    for i, j in itertools.product(range(len(scores)), repeat=2):
        pair = weights[i] * negatives[j]
        if scores[i] > scores[j]:
            num += pair
        elif scores[i] == scores[j]:
            num += 0.5 * pair
    return num / (weights.sum() * negatives.sum())


# ==================== AUC ====================
def test_auc_separating_scores():
    labels = np.array([0, 0, 1, 1])
    assert auc(ScoredSeries(np.array([0.1, 0.2, 0.8, 0.9]), labels)) == pytest.approx(1.0)
    assert auc(ScoredSeries(np.array([0.9, 0.8, 0.2, 0.1]), labels)) == pytest.approx(0.0)


def test_auc_pairwise_example():
    s = ScoredSeries(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0, 1, 0, 1]))
    assert auc(s, "roc") == pytest.approx(0.75)


def test_auc_complement_labels():
    rng = np.random.default_rng(0)
    scores = rng.random(200)
    labels = (rng.random(200) < 0.3).astype(int)
    assert auc(ScoredSeries(scores, 1 - labels)) == pytest.approx(1.0 - auc(ScoredSeries(scores, labels)), abs=1e-12)


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auc(ScoredSeries(np.arange(5.0), np.zeros(5)))


def test_auc_rejects_unknown_curve():
    with pytest.raises(InvalidArgumentError):
        auc(ScoredSeries(np.arange(4.0), np.array([0, 1, 0, 1])), "det")


def test_scored_series_length_check():
    with pytest.raises(InvalidArgumentError):
        ScoredSeries(np.arange(3.0), np.array([0, 1]))


# ==================== F1 ====================
def test_best_f1_scores_equal_labels():
    labels = np.array([0, 0, 1, 0, 1, 1, 0, 0, 0, 0])
    f1, _ = best_f1(ScoredSeries(labels.astype(float), labels))
    assert f1 == pytest.approx(1.0)


def test_best_f1_single_quantile():
    s = ScoredSeries(np.array([0.1, 0.9, 0.2, 0.8]), np.array([0, 1, 0, 1]))
    f1, threshold = best_f1(s, [0.5])
    assert f1 == pytest.approx(1.0)
    assert threshold == pytest.approx(np.quantile(s.scores, 0.5))


def test_best_f1_zero_when_no_true_positive():
    # positives have the lowest scores, so every grid threshold predicts only negatives as positive
    s = ScoredSeries(np.array([0.0, 0.0, 1.0, 2.0, 3.0, 4.0]), np.array([1, 1, 0, 0, 0, 0]))
    f1, _ = best_f1(s, [0.9])
    assert f1 == 0.0


def test_point_adjust_fills_hit_segment():
    labels = np.array([0, 0, 0, 1, 1, 1, 1, 0, 0])
    preds = np.zeros(9, dtype=int)
    preds[5] = 1
    assert point_adjust(labels, preds).tolist() == [0, 0, 0, 1, 1, 1, 1, 0, 0]
    assert point_adjust(labels, np.zeros(9, dtype=int)).tolist() == [0] * 9


def test_point_adjust_only_hit_segments():
    labels = np.array([1, 1, 0, 0, 1, 1, 0])
    preds = np.array([0, 1, 0, 0, 0, 0, 1])
    assert point_adjust(labels, preds).tolist() == [1, 1, 0, 0, 0, 0, 1]


def test_label_segments():
    assert label_segments(np.array([1, 1, 0, 1, 0, 0, 1])) == [(0, 2), (3, 4), (6, 7)]
    assert label_segments(np.zeros(4)) == []


def test_pa_f1_never_below_f1():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(20, 500))
        labels = (rng.random(n) < rng.uniform(0.05, 0.5)).astype(int)
        labels[0], labels[-1] = 0, 1
        s = ScoredSeries(rng.random(n), labels)
        assert pa_best_f1(s) >= best_f1(s)[0] - 1e-12


def test_pa_f1_single_segment_covering_everything_but_one_point():
    labels = np.ones(50, dtype=int)
    labels[0] = 0
    s = ScoredSeries(np.random.default_rng(2).random(50), labels)
    assert pa_best_f1(s) == pytest.approx(1.0, abs=0.02)


def test_random_scores_are_flattered_by_point_adjustment():
    rng = np.random.default_rng(3)
    pa, plain = [], []
    for trial in range(100):
        labels = _segments_labels(seed=trial)
        s = ScoredSeries(rng.random(1000), labels)
        pa.append(pa_best_f1(s))
        plain.append(best_f1(s)[0])
    assert np.median(pa) >= 0.9
    assert np.median(plain) < 0.75


# ==================== VUS ====================
def test_buffered_labels_ramp():
    labels = np.zeros(12, dtype=int)
    labels[5:7] = 1
    w = buffered_labels(labels, 3)
    assert w[5] == w[6] == 1.0
    # linear from 1 at distance 1 down to 1/(3+1) at distance 3
    assert w[4] == pytest.approx(1.0)
    assert w[3] == pytest.approx(0.625)
    assert w[2] == pytest.approx(0.25)
    assert w[1] == 0.0
    assert w[7] == pytest.approx(1.0)
    assert w[9] == pytest.approx(0.25)
    assert w[10] == 0.0
    assert np.array_equal(buffered_labels(labels, 0), labels.astype(float))


def test_buffered_labels_single_step_buffer():
    labels = np.array([0, 0, 0, 1, 0, 0, 0])
    assert buffered_labels(labels, 1).tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]
    assert buffered_labels(labels, 3).tolist() == pytest.approx([0.25, 0.625, 1.0, 1.0, 1.0, 0.625, 0.25])


def test_vus_zero_buffer_equals_auc():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(10, 80))
        labels = (rng.random(n) < 0.3).astype(int)
        labels[0], labels[-1] = 1, 0
        s = ScoredSeries(rng.random(n), labels)
        assert vus(s, 0, "roc") == pytest.approx(auc(s, "roc"), abs=1e-9)


def test_vus_rewards_distance_ordered_scores():
    t = np.arange(200)
    labels = np.zeros(200, dtype=int)
    labels[80:100] = 1
    distance = np.maximum(np.maximum(80 - t, t - 99), 0)
    s = ScoredSeries(1.0 / (1.0 + distance), labels)
    reversed_s = ScoredSeries(-s.scores, labels)
    assert vus(s, 0, "roc") == pytest.approx(1.0)
    assert vus(s, 0, "pr") == pytest.approx(1.0)
    for L in (5, 50):
        assert vus(s, L, "roc") >= 0.9
        assert vus(s, L, "roc") > vus(reversed_s, L, "roc")
        assert vus(s, L, "pr") > vus(reversed_s, L, "pr")


def test_vus_matches_brute_force_oracle():
    t = np.arange(20)
    labels = np.zeros(20, dtype=int)
    labels[8:12] = 1
    centre = 9.5
    scores = 1.0 / (1.0 + np.abs(t - centre))
    s = ScoredSeries(scores, labels)
    oracle = np.mean([_brute_force_weighted_auc(scores, buffered_labels(labels, ell)) for ell in range(4)])
    assert vus(s, 3, "roc") == pytest.approx(oracle, abs=1e-9)


def test_vus_skips_widths_without_negatives():
    # every normal point sits next to an anomaly, so widths 1 and 2 leave no negative mass
    labels = np.array([0, 1, 0, 0, 1, 0])
    s = ScoredSeries(np.array([0.1, 0.9, 0.2, 0.3, 0.8, 0.4]), labels)
    assert vus(s, 2, "roc") == pytest.approx(auc(s, "roc"))
    assert vus(s, 2, "pr") == pytest.approx(auc(s, "pr"))


def test_dense_segments_score_at_default_buffer():
    labels = np.zeros(1000, dtype=int)
    for start in range(0, 1000, 90):
        labels[start:start + 10] = 1
    scores = np.random.default_rng(6).random(1000) + labels
    report = evaluate_scores(scores, labels, "m", "d", 0)
    for name in ("vus_roc", "vus_pr"):
        value = getattr(report, name)
        assert 0.0 <= value <= 1.0
    assert report.vus_roc > 0.5


def test_metrics_invariant_under_increasing_transform():
    rng = np.random.default_rng(5)
    labels = _segments_labels(n=400, n_segments=3, length=20, seed=5)
    scores = rng.random(400)
    a = evaluate_scores(scores, labels, "m", "d", 0)
    b = evaluate_scores(np.exp(3.0 * scores) + 7.0, labels, "m", "d", 0)
    for name in ("f1", "pa_f1", "auroc", "auprc", "vus_roc", "vus_pr"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


def test_vus_rejects_negative_buffer():
    with pytest.raises(InvalidArgumentError):
        vus(ScoredSeries(np.arange(4.0), np.array([0, 1, 0, 1])), -1)


# ==================== AGGREGATION ====================
def _report(seed, vus_roc, method="m", dataset="d"):
    return MetricReport(method=method, dataset=dataset, seed=seed, f1=0.5, pa_f1=0.9, auroc=0.7,
                        auprc=0.4, vus_roc=vus_roc, vus_pr=0.3, best_threshold=0.1)


def test_aggregate_seeds_mean_std():
    agg = aggregate_seeds([_report(0, 0.60), _report(1, 0.62), _report(2, 0.64)])
    assert agg.n_seeds == 3
    assert agg.mean["vus_roc"] == pytest.approx(0.62)
    assert agg.std["vus_roc"] == pytest.approx(0.02)
    assert agg.std["f1"] == pytest.approx(0.0)


def test_aggregate_single_seed_has_zero_std():
    agg = aggregate_seeds([_report(0, 0.61)])
    assert agg.mean["vus_roc"] == pytest.approx(0.61)
    assert all(v == 0.0 for v in agg.std.values())


def test_aggregate_rejects_mixed_cells():
    with pytest.raises(InvalidArgumentError):
        aggregate_seeds([_report(0, 0.6), _report(1, 0.6, dataset="other")])
    with pytest.raises(InvalidArgumentError):
        aggregate_seeds([])


def test_metric_options_grid():
    grid = MetricOptions().grid
    assert len(grid) == 200
    assert grid[0] == pytest.approx(0.5)
    assert grid[-1] == pytest.approx(0.999)
