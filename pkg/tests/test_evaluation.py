import math

import numpy as np
import pytest

from roadrisk.evaluation import (
    BaselineModel,
    EvalReport,
    OperatingPoint,
    ScoredSet,
    build_report,
    extrapolate_precision,
    fit_baseline,
    operating_point,
    pr_curve,
    risk_ratio,
    roc_curve,
    threshold_curve,
)
from roadrisk.forest import TrainConfig, predict_proba, train


def scored(scores, labels) -> ScoredSet:
    return ScoredSet(np.asarray(scores, dtype=np.float64), np.asarray(labels))


# one worked example reused across the curve tests:
# scores [.8 .8 .6 .4], labels [1 0 1 0] -> groups (tp, fp): (1,1) (2,1) (2,2)
HAND = scored([0.8, 0.8, 0.6, 0.4], [1, 0, 1, 0])


class TestScoredSet:
    def test_counts(self):
        assert HAND.n_pos == 2
        assert HAND.n_neg == 2

    def test_rejects_out_of_range_scores(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            scored([1.5, 0.2], [1, 0])

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            scored([math.nan, 0.2], [1, 0])

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match="labels"):
            scored([0.1, 0.2], [1, 2])

    def test_rejects_misaligned(self):
        with pytest.raises(ValueError):
            scored([0.1, 0.2, 0.3], [1, 0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            scored([], [])


class TestRocCurve:
    def test_perfect_ranking(self):
        points, auc = roc_curve(scored([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]))
        assert auc == pytest.approx(1.0)
        assert points == [
            (0.0, 0.0, math.inf),
            (0.0, 0.5, 0.9),
            (0.0, 1.0, 0.8),
            (0.5, 1.0, 0.3),
            (1.0, 1.0, 0.2),
        ]

    def test_inverted_ranking(self):
        _, auc = roc_curve(scored([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]))
        assert auc == pytest.approx(0.0)

    def test_all_tied_is_chance(self):
        points, auc = roc_curve(scored([0.5] * 6, [1, 0, 1, 0, 1, 0]))
        assert auc == pytest.approx(0.5)
        assert points == [(0.0, 0.0, math.inf), (1.0, 1.0, 0.5)]

    def test_hand_example(self):
        points, auc = roc_curve(HAND)
        assert auc == pytest.approx(0.625)
        assert points == [
            (0.0, 0.0, math.inf),
            (0.5, 0.5, 0.8),
            (0.5, 1.0, 0.6),
            (1.0, 1.0, 0.4),
        ]

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            roc_curve(scored([0.1, 0.9], [1, 1]))

    @pytest.mark.parametrize("seed", range(30))
    def test_auc_equals_pairwise_concordance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        # coarse score grid so ties actually occur
        s = rng.integers(0, 12, n) / 11.0
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        _, auc = roc_curve(scored(s, y))
        pos, neg = s[y == 1], s[y == 0]
        conc = sum((p > neg).sum() + 0.5 * (p == neg).sum() for p in pos)
        conc /= len(pos) * len(neg)
        assert auc == pytest.approx(conc, abs=1e-9)


class TestPrCurve:
    def test_hand_example(self):
        points = pr_curve(HAND)
        assert points == [
            (0.0, 0.5, 0.8),
            (0.5, 0.5, 0.8),
            (1.0, pytest.approx(2 / 3), 0.6),
            (1.0, 0.5, 0.4),
        ]

    def test_no_anchor_duplication_when_top_group_is_negative(self):
        points = pr_curve(scored([0.9, 0.5], [0, 1]))
        assert points == [(0.0, 0.0, 0.9), (1.0, 0.5, 0.5)]

    def test_recall_is_nondecreasing(self):
        rng = np.random.default_rng(0)
        s = rng.random(500)
        y = (rng.random(500) < 0.2).astype(int)
        points = pr_curve(scored(s, y))
        recalls = [r for r, _, _ in points]
        assert recalls == sorted(recalls)
        assert recalls[-1] == 1.0

    def test_needs_a_positive(self):
        with pytest.raises(ValueError, match="positive"):
            pr_curve(scored([0.2, 0.4], [0, 0]))


class TestThresholdCurve:
    def test_hand_example(self):
        got = threshold_curve(HAND)
        assert got == [
            (0.8, 0.5, 0.5, 0.5),
            (0.6, 1.0, pytest.approx(2 / 3), 0.5),
            (0.4, 1.0, 0.5, 1.0),
        ]

    def test_thresholds_descend(self):
        rng = np.random.default_rng(1)
        s = rng.integers(0, 9, 200) / 8.0
        y = rng.integers(0, 2, 200)
        ts = [t for t, *_ in threshold_curve(scored(s, y))]
        assert ts == sorted(ts, reverse=True)


class TestOperatingPoint:
    def test_target_zero_takes_top_group(self):
        assert operating_point(HAND, 0.0) == OperatingPoint(0.8, 0.5, 0.5, 0.5)

    def test_full_recall_stops_at_first_satisfying_group(self):
        got = operating_point(HAND, 1.0)
        assert got.threshold == 0.6  # not 0.4: smallest flagged set wins
        assert got.recall == 1.0
        assert got.precision == pytest.approx(2 / 3)

    def test_intermediate_target(self):
        assert operating_point(HAND, 0.75).threshold == 0.6

    def test_target_validated(self):
        with pytest.raises(ValueError, match="target_recall"):
            operating_point(HAND, 1.5)


class TestExtrapolation:
    def test_reference_point(self):
        # recall .85, fpr .13 carried to a 5.8e-5 positive rate
        got = extrapolate_precision(0.85, 0.13, 5.8e-5)
        assert got == pytest.approx(3.791089877590091e-4, rel=1e-12)
        assert abs(got - 3.79e-4) <= 1e-6

    def test_reference_risk_ratio(self):
        prec = extrapolate_precision(0.85, 0.13, 5.8e-5)
        assert risk_ratio(prec, 5.8e-5) == pytest.approx(6.53636185791395, rel=1e-12)

    def test_perfect_classifier(self):
        assert extrapolate_precision(1.0, 0.0, 0.01) == 1.0

    def test_balanced_prevalence_reduces_to_rate_ratio(self):
        assert extrapolate_precision(0.6, 0.2, 0.5) == pytest.approx(0.75)

    def test_monotone_in_prevalence(self):
        lo = extrapolate_precision(0.8, 0.1, 1e-4)
        hi = extrapolate_precision(0.8, 0.1, 1e-2)
        assert hi > lo

    def test_range_validated(self):
        with pytest.raises(ValueError, match="recall"):
            extrapolate_precision(1.2, 0.1, 0.1)
        with pytest.raises(ValueError, match="fpr"):
            extrapolate_precision(0.5, -0.1, 0.1)
        with pytest.raises(ValueError, match="prevalence"):
            extrapolate_precision(0.5, 0.1, 2.0)

    def test_degenerate_denominator(self):
        with pytest.raises(ValueError, match="undefined"):
            extrapolate_precision(0.0, 0.0, 0.5)

    def test_risk_ratio_validation(self):
        with pytest.raises(ValueError, match="prevalence"):
            risk_ratio(0.5, 0.0)
        with pytest.raises(ValueError, match="precision"):
            risk_ratio(-0.1, 0.5)


class TestBaseline:
    def fitted(self) -> BaselineModel:
        return fit_baseline([0, 0, 5, 5], [0, 0, 1, 1])

    def test_strictly_above_semantics(self):
        model = self.fitted()
        assert model.score(0) == 1.0  # everything above 0 is positive
        assert model.score(2) == 1.0
        assert model.score(-1) == 0.5  # all four rows above, half positive

    def test_top_count_falls_back_to_global(self):
        model = self.fitted()
        assert model.score(5) == 0.5
        assert model.score(99) == 0.5

    def test_vectorized(self):
        got = self.fitted().score(np.array([0.0, 5.0, -1.0]))
        assert got.tolist() == [1.0, 0.5, 0.5]

    def test_scalar_returns_float(self):
        assert isinstance(self.fitted().score(0), float)

    def test_unsorted_input_and_ties(self):
        model = fit_baseline([3, 1, 3, 2, 1], [1, 0, 0, 1, 0])
        # rows above 1: counts {2, 3, 3} with labels {1, 1, 0}
        assert model.score(1) == pytest.approx(2 / 3)
        assert model.score(2.5) == pytest.approx(0.5)

    def test_scores_usable_in_roc(self):
        rng = np.random.default_rng(2)
        counts = rng.poisson(2.0, 400).astype(float)
        labels = (rng.random(400) < (counts + 1) / 10).astype(int)
        model = fit_baseline(counts, labels)
        _, auc = roc_curve(scored(model.score(counts), labels))
        assert auc > 0.5

    def test_round_trip(self):
        model = fit_baseline([3, 1, 3, 2, 1], [1, 0, 0, 1, 0])
        clone = BaselineModel.from_dict(model.to_dict())
        grid = np.linspace(-1, 5, 25)
        assert (model.score(grid) == clone.score(grid)).all()

    def test_format_guard(self):
        with pytest.raises(ValueError, match="baseline"):
            BaselineModel.from_dict({"format": "nope"})

    def test_fit_validation(self):
        with pytest.raises(ValueError, match="no rows"):
            fit_baseline([], [])
        with pytest.raises(ValueError, match="aligned"):
            fit_baseline([1, 2], [0])
        with pytest.raises(ValueError, match="labels"):
            fit_baseline([1, 2], [0, 3])


class TestReport:
    def test_build_report_wiring(self):
        report = build_report(HAND, target_recall=0.75, prevalence=5.8e-5,
                              model_kind="brf", baseline_auc=0.51)
        assert isinstance(report, EvalReport)
        assert report.auc_roc == pytest.approx(0.625)
        assert report.operating.threshold == 0.6
        assert report.extrapolated_precision == pytest.approx(
            extrapolate_precision(1.0, 0.5, 5.8e-5)
        )
        assert report.risk_ratio == pytest.approx(
            report.extrapolated_precision / 5.8e-5
        )
        assert report.baseline_auc == 0.51

    def test_to_dict_schema(self):
        d = build_report(HAND, 0.5, 1e-4, "rf").to_dict()
        assert d["model_kind"] == "rf"
        assert d["n_test"] == 4
        assert d["test_positive_rate"] == 0.5
        assert d["baseline_auc"] is None
        assert d["roc_points"][0] == [0.0, 0.0, math.inf]
        assert d["operating_point"]["recall"] >= 0.5
        assert {"prevalence", "extrapolated_precision", "risk_ratio"} <= d.keys()


class TestBalancedForestBehavior:
    """Balancing should lift minority recall at the midpoint threshold."""

    def test_brf_recall_dominates_rf_on_imbalanced_data(self):
        wins, brf_recalls, rf_recalls = 0, [], []
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            n = 600
            y = (rng.random(n) < 0.05).astype(np.int8)
            x0 = np.where(y == 1, 1.0, -1.0) + rng.normal(0.0, 1.2, n)
            X = np.column_stack([x0, rng.uniform(-1, 1, (n, 2))])

            class M:
                column_names = ("a", "b", "c")
                rows = X
                labels = y
                weights = np.ones(n)

            cfg = dict(num_trees=25, max_depth=6, seed=seed)
            hold_rng = np.random.default_rng(200 + seed)
            yh = (hold_rng.random(300) < 0.05).astype(np.int8)
            xh0 = np.where(yh == 1, 1.0, -1.0) + hold_rng.normal(0.0, 1.2, 300)
            Xh = np.column_stack([xh0, hold_rng.uniform(-1, 1, (300, 2))])
            if yh.sum() == 0:
                continue
            recalls = {}
            for mode in ("brf", "rf"):
                model = train(M(), TrainConfig(**cfg), mode=mode)
                s = predict_proba(model, Xh)
                recalls[mode] = ((s >= 0.5) & (yh == 1)).sum() / yh.sum()
            brf_recalls.append(recalls["brf"])
            rf_recalls.append(recalls["rf"])
            if recalls["brf"] >= recalls["rf"]:
                wins += 1
        assert wins >= 8
        assert np.mean(brf_recalls) > np.mean(rf_recalls)
