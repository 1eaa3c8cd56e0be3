import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest

from roadrisk.forest import (
    ForestModel,
    SplitDecision,
    TrainConfig,
    best_split,
    brf_class_weights,
    from_json,
    gini,
    poisson_bootstrap,
    predict_proba,
    to_json,
    train,
)


@dataclass
class Mat:
    column_names: tuple
    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray


def mat(rows, labels, weights=None) -> Mat:
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int8)
    if weights is None:
        weights = np.ones(len(labels))
    return Mat(
        column_names=tuple(f"f{j}" for j in range(rows.shape[1])),
        rows=rows,
        labels=labels,
        weights=np.asarray(weights, dtype=np.float64),
    )


def blobs(n: int, seed: int, k_noise: int = 3) -> Mat:
    """Linearly separable signal in feature 0 plus uniform noise features."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.3).astype(np.int8)
    x0 = np.where(y == 1, 1.0, -1.0) + rng.normal(0.0, 0.3, n)
    noise = rng.uniform(-1.0, 1.0, (n, k_noise))
    return mat(np.column_stack([x0, noise]), y)


class TestGini:
    def test_balanced(self):
        assert gini([0, 1]) == pytest.approx(0.5)

    def test_three_one(self):
        assert gini([0, 0, 0, 1]) == pytest.approx(0.375)

    def test_pure(self):
        assert gini([1, 1, 1]) == 0.0
        assert gini([0]) == 0.0

    def test_weighted(self):
        assert gini([0, 1], weights=[3.0, 1.0]) == pytest.approx(0.375)

    def test_zero_total_weight_raises(self):
        with pytest.raises(ValueError, match="positive"):
            gini([0, 1], weights=[0.0, 0.0])

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            gini([0, 1], weights=[1.0])


def column(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1, 1)


class TestBestSplit:
    def test_textbook_split(self):
        got = best_split(column([1, 2, 3, 4]), np.array([0, 0, 1, 1]), np.ones(4))
        assert got == SplitDecision(0, 2.5, True, pytest.approx(0.5))

    def test_constant_feature(self):
        assert best_split(column([5, 5, 5, 5]), np.array([0, 1, 0, 1]), np.ones(4)) is None

    def test_pure_node(self):
        assert best_split(column([1, 2, 3]), np.array([1, 1, 1]), np.ones(3)) is None

    def test_tie_prefers_lower_feature(self):
        X = np.array([[1, 1], [2, 2], [3, 3], [4, 4]], dtype=np.float64)
        got = best_split(X, np.array([0, 0, 1, 1]), np.ones(4))
        assert got.feature_index == 0

    def test_tie_prefers_lower_threshold(self):
        # symmetric labels: thresholds 1.5 and 3.5 both give gain 1/6
        got = best_split(column([1, 2, 3, 4]), np.array([1, 0, 0, 1]), np.ones(4))
        assert got.threshold == 1.5
        assert got.gain == pytest.approx(1.0 / 6.0)

    def test_missing_rows_routed_to_best_side(self):
        x = column([math.nan, 1, 2, 3])
        got = best_split(x, np.array([1, 0, 0, 1]), np.ones(4))
        assert got == SplitDecision(0, 2.5, False, pytest.approx(0.5))

    def test_counts_act_as_multiplicity(self):
        # count 3 on one row shifts the optimum exactly like 3 duplicate rows
        dup = best_split(
            column([1, 1, 1, 2, 3]), np.array([1, 1, 1, 0, 0]), np.ones(5)
        )
        weighted = best_split(
            column([1, 2, 3]), np.array([1, 0, 0]), np.array([3.0, 1.0, 1.0])
        )
        assert dup == weighted

    def test_min_samples_leaf_blocks_thin_children(self):
        y = np.array([0, 1, 1, 1])
        # only threshold 1.5 separates; a leaf floor of 2 forbids the 1-row child
        assert best_split(column([1, 2, 2, 2]), y, np.ones(4), min_samples_leaf=2) is None

    def test_feature_subset_respected(self):
        X = np.column_stack([[1, 2, 3, 4], [4, 3, 2, 1]]).astype(np.float64)
        got = best_split(X, np.array([0, 0, 1, 1]), np.ones(4), feature_indices=[1])
        assert got.feature_index == 1

    def test_zero_total_count_raises(self):
        with pytest.raises(ValueError, match="positive"):
            best_split(column([1, 2]), np.array([0, 1]), np.zeros(2))


def ref_gini_from(p: float, w: float) -> float:
    if w == 0.0:
        return 0.0
    q = p / w
    return 1.0 - q * q - (1.0 - q) * (1.0 - q)


def ref_best_split(X, y, c, msl):
    """Plain-loop exhaustive reference with the documented tie-break order:
    feature ascending, then missing-side left-first, then threshold ascending,
    replacing only on strictly larger gain."""
    n, k = X.shape
    W = float(c.sum())
    P = float((c * y).sum())
    parent = ref_gini_from(P, W)
    best = None
    for f in range(k):
        x = X[:, f]
        miss = np.isnan(x)
        vals = np.unique(x[~miss])
        if vals.size < 2:
            continue
        for missing_left in (True, False):
            for i in range(vals.size - 1):
                thr = (vals[i] + vals[i + 1]) / 2.0
                if thr >= vals[i + 1]:
                    thr = float(vals[i])
                go_left = np.where(miss, missing_left, x <= thr)
                lw = float(c[go_left].sum())
                lp = float((c * y)[go_left].sum())
                rw, rp = W - lw, P - lp
                if lw < msl or rw < msl:
                    continue
                child = (lw * ref_gini_from(lp, lw) + rw * ref_gini_from(rp, rw)) / W
                gain = parent - child
                if best is None or gain > best[3] + 1e-15:
                    best = (f, float(thr), missing_left, gain)
            if not miss.any():
                break
    if best is None or best[3] <= 0.0:
        return None
    return best


class TestBestSplitAgainstExhaustiveReference:
    @pytest.mark.parametrize("seed", range(60))
    def test_integer_grids_with_missing(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 40))
        k = int(rng.integers(1, 5))
        X = rng.integers(0, 4, (n, k)).astype(np.float64)
        X[rng.random((n, k)) < 0.15] = math.nan
        y = rng.integers(0, 2, n)
        c = rng.poisson(1.2, n).astype(np.float64)
        if c.sum() == 0:
            c[0] = 1.0
        msl = int(rng.integers(1, 3))
        got = best_split(X, y, c, min_samples_leaf=msl)
        want = ref_best_split(X, y.astype(np.float64), c, msl)
        if want is None:
            assert got is None
        else:
            assert got is not None
            assert (got.feature_index, got.threshold, got.missing_left) == want[:3]
            assert got.gain == pytest.approx(want[3], abs=1e-12)

    @pytest.mark.parametrize("seed", range(40))
    def test_continuous_features(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(5, 50))
        k = int(rng.integers(1, 4))
        X = rng.normal(0.0, 1.0, (n, k))
        y = (X[:, 0] + rng.normal(0.0, 0.8, n) > 0).astype(np.float64)
        c = np.ones(n)
        got = best_split(X, y, c)
        want = ref_best_split(X, y, c, 1)
        assert (got is None) == (want is None)
        if got is not None:
            assert (got.feature_index, got.threshold, got.missing_left) == want[:3]
            assert got.gain == pytest.approx(want[3], abs=1e-12)


class TestPoissonBootstrap:
    @pytest.mark.parametrize("lam", [0.1, 0.5, 1.0])
    def test_mean_matches_rate(self, lam):
        n = 100_000
        counts = poisson_bootstrap(np.full(n, lam), rng=np.random.default_rng(3))
        tolerance = 5.0 * math.sqrt(lam / n)
        assert abs(counts.mean() - lam) < tolerance

    def test_subsampling_rate_scales_lambda(self):
        n = 100_000
        counts = poisson_bootstrap(np.ones(n), subsampling_rate=0.25,
                                   rng=np.random.default_rng(4))
        assert abs(counts.mean() - 0.25) < 5.0 * math.sqrt(0.25 / n)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            poisson_bootstrap(np.array([1.0, -0.5]))

    def test_deterministic_for_seed(self):
        w = np.linspace(0.1, 2.0, 100)
        assert (poisson_bootstrap(w, rng=7) == poisson_bootstrap(w, rng=7)).all()


class TestClassBalance:
    def test_brf_weights(self):
        y = np.array([1] * 10 + [0] * 170)
        assert brf_class_weights(y) == {1: 1.0, 0: 10 / 170}

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            brf_class_weights(np.ones(5))

    def test_expected_mass_identity_is_exact_in_rationals(self):
        # the design identity: n_neg * (n_pos / n_neg) == n_pos, exactly
        n_pos, n_neg = 10, 170
        assert sum([Fraction(n_pos, n_neg)] * n_neg) == n_pos

    def test_float_level_balance(self):
        y = np.array([1] * 13 + [0] * 211)
        cw = brf_class_weights(y)
        lam = np.where(y == 1, cw[1], cw[0])
        assert lam[y == 0].sum() == pytest.approx(lam[y == 1].sum(), rel=1e-12)

    def test_class_weight_scaling_equals_rate_scaling(self):
        """Doubling all class weights must reproduce doubling the rate bit-for-bit."""
        m = blobs(300, seed=9)
        a = train(m, TrainConfig(num_trees=10, max_depth=6, seed=5,
                                 class_weights={0: 1.0, 1: 2.0}, subsampling_rate=0.5))
        b = train(m, TrainConfig(num_trees=10, max_depth=6, seed=5,
                                 class_weights={0: 0.5, 1: 1.0}, subsampling_rate=1.0))
        X = blobs(50, seed=10).rows
        assert (predict_proba(a, X) == predict_proba(b, X)).all()

    def test_row_weight_scaling_equals_rate_scaling(self):
        m = blobs(300, seed=9)
        doubled = Mat(m.column_names, m.rows, m.labels, m.weights * 2.0)
        a = train(doubled, TrainConfig(num_trees=10, max_depth=6, seed=5,
                                       subsampling_rate=0.5))
        b = train(m, TrainConfig(num_trees=10, max_depth=6, seed=5,
                                 subsampling_rate=1.0))
        X = blobs(50, seed=10).rows
        assert (predict_proba(a, X) == predict_proba(b, X)).all()


class TestTrainValidation:
    def test_single_class(self):
        with pytest.raises(ValueError, match="both classes"):
            train(mat([[1.0], [2.0]], [1, 1]))

    def test_bad_labels(self):
        with pytest.raises(ValueError, match="labels"):
            train(mat([[1.0], [2.0]], [1, 2]))

    def test_bad_weights(self):
        with pytest.raises(ValueError, match="weights"):
            train(mat([[1.0], [2.0]], [0, 1], weights=[1.0, 0.0]))

    def test_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            train(blobs(20, 0), mode="boosted")

    def test_width_mismatch(self):
        bad = Mat(("a", "b"), np.ones((3, 1)), np.array([0, 1, 0]), np.ones(3))
        with pytest.raises(ValueError, match="width"):
            train(bad)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_trees=0),
            dict(max_depth=0),
            dict(min_samples_leaf=0),
            dict(features_per_split="log2"),
            dict(features_per_split=0),
            dict(subsampling_rate=0.0),
            dict(seed=-1),
            dict(n_jobs=0),
            dict(class_weights={2: 1.0}),
            dict(class_weights={0: 0.0}),
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_mtry(self):
        assert TrainConfig().mtry(15) == 3
        assert TrainConfig().mtry(1) == 1
        assert TrainConfig(features_per_split=4).mtry(15) == 4
        assert TrainConfig(features_per_split=40).mtry(15) == 15


class TestTrainedForest:
    def test_learns_separable_signal(self):
        m = blobs(600, seed=1)
        model = train(m, TrainConfig(num_trees=30, max_depth=8, seed=0))
        holdout = blobs(400, seed=2)
        scores = predict_proba(model, holdout.rows)
        pos = scores[holdout.labels == 1]
        neg = scores[holdout.labels == 0]
        better = np.mean([(p > neg).mean() + 0.5 * (p == neg).mean() for p in pos])
        assert better > 0.95  # concordance on held-out points

    def test_deterministic_across_n_jobs(self):
        m = blobs(300, seed=3)
        cfg = dict(num_trees=12, max_depth=6, seed=11)
        one = train(m, TrainConfig(n_jobs=1, **cfg))
        four = train(m, TrainConfig(n_jobs=4, **cfg))
        assert to_json(one) == to_json(four)

    def test_seed_changes_model(self):
        m = blobs(300, seed=3)
        a = train(m, TrainConfig(num_trees=5, max_depth=5, seed=0))
        b = train(m, TrainConfig(num_trees=5, max_depth=5, seed=1))
        assert to_json(a) != to_json(b)

    def test_repeat_training_identical(self):
        m = blobs(200, seed=4)
        cfg = TrainConfig(num_trees=8, max_depth=6, seed=2)
        assert to_json(train(m, cfg)) == to_json(train(m, cfg))

    def test_prior_is_lambda_weighted(self):
        m = blobs(400, seed=5)
        model = train(m, TrainConfig(num_trees=1, seed=0), mode="brf")
        # balanced mode equalizes class mass, so the prior sits at 1/2
        assert model.prior == pytest.approx(0.5, rel=1e-9)
        rf = train(m, TrainConfig(num_trees=1, seed=0), mode="rf")
        assert rf.prior == pytest.approx((m.labels == 1).mean(), rel=1e-9)

    def test_constant_features_give_stump_forest(self):
        m = mat(np.ones((40, 3)), [0, 1] * 20)
        model = train(m, TrainConfig(num_trees=5, seed=0))
        assert model.feature_importance.sum() == 0.0
        scores = predict_proba(model, np.ones((7, 3)))
        assert (scores == scores[0]).all()

    def test_min_samples_leaf_prunes_to_stump(self):
        m = blobs(60, seed=6)
        model = train(m, TrainConfig(num_trees=4, min_samples_leaf=10_000, seed=0))
        assert model.feature_importance.sum() == 0.0

    def test_importance_finds_planted_feature(self):
        m = blobs(500, seed=7)
        model = train(m, TrainConfig(num_trees=20, max_depth=6, seed=0))
        assert model.feature_importance.sum() == pytest.approx(1.0, rel=1e-12)
        assert model.feature_importance[0] > 0.5
        assert np.argmax(model.feature_importance) == 0

    def test_predict_width_checked(self):
        model = train(blobs(50, seed=8), TrainConfig(num_trees=2, seed=0))
        with pytest.raises(ValueError, match="width"):
            predict_proba(model, np.ones((3, 9)))

    def test_predict_empty(self):
        model = train(blobs(50, seed=8), TrainConfig(num_trees=2, seed=0))
        assert predict_proba(model, np.empty((0, 4))).shape == (0,)

    def test_scores_are_probabilities(self):
        m = blobs(200, seed=12)
        model = train(m, TrainConfig(num_trees=10, max_depth=5, seed=0))
        scores = predict_proba(model, m.rows)
        assert ((scores >= 0.0) & (scores <= 1.0)).all()

    def test_missing_values_at_predict_time(self):
        m = blobs(300, seed=13)
        model = train(m, TrainConfig(num_trees=10, max_depth=5, seed=0))
        X = blobs(40, seed=14).rows.copy()
        X[:, 1:] = math.nan  # noise features gone; signal feature intact
        scores = predict_proba(model, X)
        assert np.isfinite(scores).all()


class TestSerialization:
    def test_round_trip_predicts_identically(self):
        m = blobs(300, seed=20)
        model = train(m, TrainConfig(num_trees=10, max_depth=7, seed=1))
        clone = from_json(to_json(model))
        X = blobs(1000, seed=21).rows
        assert (predict_proba(model, X) == predict_proba(clone, X)).all()
        assert clone.mode == model.mode
        assert clone.class_weights == model.class_weights
        assert to_json(clone) == to_json(model)

    def test_format_guard(self):
        with pytest.raises(ValueError, match="forest"):
            from_json(json.dumps({"format": "something-else"}))

    def test_payload_shape(self):
        model = train(blobs(60, seed=22), TrainConfig(num_trees=2, max_depth=3, seed=0))
        payload = json.loads(to_json(model))
        assert payload["format"] == "roadrisk-forest"
        assert payload["version"] == 1
        assert len(payload["trees"]) == 2
        assert "n_jobs" not in payload["config"]

    def test_round_trip_with_missing_routing(self):
        rng = np.random.default_rng(23)
        X = rng.normal(0.0, 1.0, (300, 3))
        X[rng.random((300, 3)) < 0.2] = math.nan
        y = (np.nan_to_num(X[:, 0]) > 0).astype(np.int8)
        m = Mat(("a", "b", "c"), X, y, np.ones(300))
        model = train(m, TrainConfig(num_trees=8, max_depth=6, seed=3))
        clone = from_json(to_json(model))
        Q = rng.normal(0.0, 1.0, (200, 3))
        Q[rng.random((200, 3)) < 0.3] = math.nan
        assert (predict_proba(model, Q) == predict_proba(clone, Q)).all()


class TestModelShape:
    def test_metadata(self):
        m = blobs(100, seed=30)
        model = train(m, TrainConfig(num_trees=3, seed=0), mode="rf")
        assert isinstance(model, ForestModel)
        assert model.mode == "rf"
        assert model.n_training_rows == 100
        assert model.column_names == m.column_names
        assert len(model.trees) == 3
        assert model.class_weights == {0: 1.0, 1: 1.0}
