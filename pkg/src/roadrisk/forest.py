"""Random forest and balanced random forest, trained with a Poisson bootstrap.

Instead of resampling row indices, each tree draws a per-row appearance count
from Poisson(lambda_i) with

    lambda_i = row_weight_i * class_weight[label_i] * subsampling_rate

and grows on rows with count > 0, using the counts as multiplicities in every
weighted statistic. Under the balanced mode the negative class weight defaults
to n_pos / n_neg, which equalizes the expected total appearance mass of the
two classes: sum over negatives of lambda = n_neg * (n_pos / n_neg) * rate =
n_pos * rate = sum over positives. Multiplying all class weights by a factor
is therefore the same as multiplying the subsampling rate by it.

Trees are binary CART splits on numeric features chosen by Gini impurity
decrease. Candidate thresholds are midpoints between consecutive distinct
values; rows with a missing (NaN) feature go wholesale to whichever side
maximizes the gain, recorded per split for prediction time. Ties break toward
the lower feature index, then the lower threshold, then sending missing rows
left, so training is order-deterministic. When the per-node feature subset
yields no positive gain the node becomes a leaf (no second draw).

Determinism: tree t seeds its generator from SeedSequence(seed, spawn_key=(t,))
and consumes it in a fixed order (bootstrap draw, then per-node subsets in
depth-first left-to-right order), so results are identical for any n_jobs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

MODES = ("rf", "brf")


class DataMatrix(Protocol):
    """What train() needs from a feature matrix."""

    column_names: tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    num_trees: int = 100
    max_depth: int = 18
    min_samples_leaf: int = 1
    features_per_split: int | str = "sqrt"
    subsampling_rate: float = 1.0
    class_weights: Mapping[int, float] | None = None
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.num_trees < 1:
            raise ValueError(f"num_trees must be >= 1, got {self.num_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if isinstance(self.features_per_split, str):
            if self.features_per_split != "sqrt":
                raise ValueError(
                    f'features_per_split must be an int or "sqrt", got '
                    f"{self.features_per_split!r}"
                )
        elif self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.subsampling_rate <= 0.0:
            raise ValueError(f"subsampling_rate must be positive, got {self.subsampling_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.n_jobs < 1:
            raise ValueError(f"n_jobs must be >= 1, got {self.n_jobs}")
        if self.class_weights is not None:
            for label, w in self.class_weights.items():
                if label not in (0, 1):
                    raise ValueError(f"class_weights key {label!r} must be 0 or 1")
                if not (w > 0.0 and math.isfinite(w)):
                    raise ValueError(f"class weight for {label} must be positive, got {w}")

    def mtry(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        return min(n_features, int(self.features_per_split))


def gini(labels: Sequence[int] | np.ndarray, weights: Sequence[float] | np.ndarray | None = None) -> float:
    """Weighted Gini impurity 1 - p0^2 - p1^2 of a binary label set.

    Raises ValueError when the total weight is not positive.
    """
    y = np.asarray(labels)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(y):
        raise ValueError("labels and weights must align")
    total = w.sum()
    if not total > 0.0:
        raise ValueError(f"total weight must be positive, got {total}")
    p1 = float(w[y == 1].sum() / total)
    p0 = 1.0 - p1
    return 1.0 - p0 * p0 - p1 * p1


@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    threshold: float
    missing_left: bool
    gain: float


def best_split(
    values: np.ndarray,
    labels: np.ndarray,
    counts: np.ndarray,
    feature_indices: Sequence[int] | None = None,
    min_samples_leaf: int = 1,
) -> SplitDecision | None:
    """Exhaustive best Gini split over the given feature columns.

    ``values`` is the (n, k) matrix of the node's rows (NaN = missing) and
    ``counts`` their positive multiplicities. Gain is measured as the parent
    impurity minus the count-weighted mean child impurity, with missing rows
    assigned to the gain-maximizing side. Returns None when no candidate
    threshold produces positive gain while keeping both children at or above
    min_samples_leaf effective rows.
    """
    X = np.asarray(values, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("values must be 2-dimensional")
    y = np.asarray(labels, dtype=np.float64)
    c = np.asarray(counts, dtype=np.float64)
    if feature_indices is None:
        feature_indices = range(X.shape[1])
    W = c.sum()
    P = float((c * y).sum())
    if not W > 0.0:
        raise ValueError("total count must be positive")
    parent_g = 1.0 - (P / W) ** 2 - ((W - P) / W) ** 2
    best: SplitDecision | None = None
    for f in sorted(feature_indices):
        found = _scan_feature(X[:, f], y, c, W, P, parent_g, min_samples_leaf)
        if found is None:
            continue
        thr, missing_left, gain = found
        if best is None or gain > best.gain:
            best = SplitDecision(f, thr, missing_left, gain)
    if best is None or best.gain <= 0.0:
        return None
    return best


def _scan_feature(
    x: np.ndarray,
    y: np.ndarray,
    c: np.ndarray,
    W: float,
    P: float,
    parent_g: float,
    msl: int,
) -> tuple[float, bool, float] | None:
    """Best (threshold, missing_left, gain) for one feature column, or None."""
    miss = np.isnan(x)
    if miss.any():
        mw = float(c[miss].sum())
        mp = float((c[miss] * y[miss]).sum())
        present = ~miss
        xp, cp, yp = x[present], c[present], y[present]
    else:
        mw = mp = 0.0
        xp, cp, yp = x, c, y
    if xp.size < 2:
        return None
    order = np.argsort(xp, kind="stable")
    xs = xp[order]
    cw = cp[order]
    pw = cw * yp[order]
    cum_w = np.cumsum(cw)
    cum_p = np.cumsum(pw)
    boundaries = np.flatnonzero(xs[1:] != xs[:-1])
    if boundaries.size == 0:
        return None
    thresholds = (xs[boundaries] + xs[boundaries + 1]) / 2.0
    # when adjacent values are ~1 ulp apart the midpoint can round up to the
    # upper value, which would silently empty the right child; clamp it down
    thresholds = np.where(
        thresholds >= xs[boundaries + 1], xs[boundaries], thresholds
    )
    lw0 = cum_w[boundaries]
    lp0 = cum_p[boundaries]
    rw0 = cum_w[-1] - lw0
    rp0 = cum_p[-1] - lp0

    def weighted_child_impurity(lw, lp, rw, rp):
        # lw * gini_left + rw * gini_right, written to avoid forming p twice
        left = lw - (lp * lp + (lw - lp) * (lw - lp)) / lw
        right = rw - (rp * rp + (rw - rp) * (rw - rp)) / rw
        return (left + right) / W

    best_tuple: tuple[float, bool, float] | None = None
    for missing_left in (True, False):
        if missing_left:
            lw, lp, rw, rp = lw0 + mw, lp0 + mp, rw0, rp0
        else:
            lw, lp, rw, rp = lw0, lp0, rw0 + mw, rp0 + mp
        valid = (lw >= msl) & (rw >= msl)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = parent_g - weighted_child_impurity(lw, lp, rw, rp)
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))  # first max = lowest threshold
        g = float(gain[i])
        if best_tuple is None or g > best_tuple[2]:
            best_tuple = (float(thresholds[i]), missing_left, g)
        if mw == 0.0:
            break  # no missing rows: both assignments identical
    return best_tuple


def poisson_bootstrap(
    weights: np.ndarray | Sequence[float],
    subsampling_rate: float = 1.0,
    rng: np.random.Generator | int | None = 0,
) -> np.ndarray:
    """Per-row appearance counts ~ Poisson(weight * subsampling_rate)."""
    lam = np.asarray(weights, dtype=np.float64) * subsampling_rate
    if (lam < 0).any() or not np.isfinite(lam).all():
        raise ValueError("bootstrap weights must be finite and non-negative")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return gen.poisson(lam)


def brf_class_weights(labels: np.ndarray | Sequence[int]) -> dict[int, float]:
    """Balanced-mode default class weights: positives 1, negatives n_pos/n_neg."""
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present to balance")
    return {1: 1.0, 0: n_pos / n_neg}


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_effective: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        live = np.flatnonzero(self.feature[node] >= 0)
        while live.size:
            nd = node[live]
            f = self.feature[nd]
            x = X[live, f]
            go_left = np.where(np.isnan(x), self.missing_left[nd], x <= self.threshold[nd])
            node[live] = np.where(go_left, self.left[nd], self.right[nd])
            live = live[self.feature[node[live]] >= 0]
        return self.value[node]

    def node_count(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        def walk(i: int) -> dict:
            if self.feature[i] < 0:
                return {
                    "value": float(self.value[i]),
                    "n_effective": float(self.n_effective[i]),
                }
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "missing_left": bool(self.missing_left[i]),
                "n_effective": float(self.n_effective[i]),
                "left": walk(int(self.left[i])),
                "right": walk(int(self.right[i])),
            }

        return walk(0)

    @staticmethod
    def from_dict(root: dict) -> "Tree":
        nodes = _TreeNodes()

        def walk(d: dict) -> int:
            if "feature" not in d:
                return nodes.add_leaf(d["value"], d["n_effective"])
            i = nodes.add_internal(d["feature"], d["threshold"], d["missing_left"], d["n_effective"])
            nodes.left[i] = walk(d["left"])
            nodes.right[i] = walk(d["right"])
            return i

        walk(root)
        return nodes.freeze()


class _TreeNodes:
    """Append-only node store used while growing or deserializing a tree."""

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n_effective: list[float] = []

    def add_leaf(self, value: float, n_effective: float) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.missing_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.n_effective.append(float(n_effective))
        return len(self.feature) - 1

    def add_internal(
        self, feature: int, threshold: float, missing_left: bool, n_effective: float
    ) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.missing_left.append(bool(missing_left))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(math.nan)
        self.n_effective.append(float(n_effective))
        return len(self.feature) - 1

    def freeze(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            missing_left=np.asarray(self.missing_left, dtype=bool),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
            n_effective=np.asarray(self.n_effective, dtype=np.float64),
        )


@dataclass
class ForestModel:
    mode: str
    config: TrainConfig
    column_names: tuple[str, ...]
    class_weights: dict[int, float]
    trees: tuple[Tree, ...]
    feature_importance: np.ndarray
    prior: float
    n_training_rows: int


class _TreeGrower:
    def __init__(
        self,
        columns: np.ndarray,
        y: np.ndarray,
        counts: np.ndarray,
        config: TrainConfig,
        rng: np.random.Generator,
        prior: float,
    ) -> None:
        self.columns = columns  # (n, k) Fortran order for fast column gathers
        self.y = y
        self.c = counts.astype(np.float64)
        self.cfg = config
        self.rng = rng
        self.k = columns.shape[1]
        self.m = config.mtry(self.k)
        self.nodes = _TreeNodes()
        self.importance = np.zeros(self.k)
        self.prior = prior

    def grow(self) -> Tree:
        rows = np.flatnonzero(self.c > 0)
        if rows.size == 0:
            self.nodes.add_leaf(self.prior, 0.0)
        else:
            self._grow(rows, depth=0)
        return self.nodes.freeze()

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        c = self.c[rows]
        y = self.y[rows]
        W = float(c.sum())
        P = float((c * y).sum())
        value = P / W
        msl = self.cfg.min_samples_leaf
        if (
            depth >= self.cfg.max_depth
            or P == 0.0
            or P == W
            or W < 2.0 * msl
        ):
            return self.nodes.add_leaf(value, W)
        candidates = self.rng.choice(self.k, size=self.m, replace=False)
        candidates.sort()
        parent_g = 1.0 - (P / W) ** 2 - ((W - P) / W) ** 2
        best: SplitDecision | None = None
        for f in candidates:
            found = _scan_feature(self.columns[rows, f], y, c, W, P, parent_g, msl)
            if found is None:
                continue
            thr, missing_left, gain = found
            if best is None or gain > best.gain:
                best = SplitDecision(int(f), thr, missing_left, gain)
        if best is None or best.gain <= 0.0:
            return self.nodes.add_leaf(value, W)

        self.importance[best.feature_index] += W * best.gain
        x = self.columns[rows, best.feature_index]
        go_left = np.where(np.isnan(x), best.missing_left, x <= best.threshold)
        node = self.nodes.add_internal(
            best.feature_index, best.threshold, best.missing_left, W
        )
        self.nodes.left[node] = self._grow(rows[go_left], depth + 1)
        self.nodes.right[node] = self._grow(rows[~go_left], depth + 1)
        return node


def train(matrix: DataMatrix, config: TrainConfig = TrainConfig(), mode: str = "brf") -> ForestModel:
    """Train a forest on a feature matrix.

    mode "rf" uses unit class weights, "brf" defaults the negative class
    weight to n_pos/n_neg (both overridable via config.class_weights).
    Raises ValueError when only one class is present or weights are invalid.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    X = np.ascontiguousarray(matrix.rows, dtype=np.float64)
    y = np.asarray(matrix.labels).astype(np.int8)
    w = np.asarray(matrix.weights, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training matrix must be a non-empty 2-d array")
    if X.shape[1] != len(matrix.column_names):
        raise ValueError(
            f"matrix width {X.shape[1]} does not match column_names "
            f"({len(matrix.column_names)})"
        )
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"training requires both classes; got {n_pos} positive / {n_neg} negative"
        )
    if (w <= 0).any() or not np.isfinite(w).all():
        raise ValueError("row weights must be positive and finite")

    if config.class_weights is not None:
        cw = {0: float(config.class_weights.get(0, 1.0)), 1: float(config.class_weights.get(1, 1.0))}
    elif mode == "brf":
        cw = brf_class_weights(y)
    else:
        cw = {0: 1.0, 1: 1.0}
    lam = w * np.where(y == 1, cw[1], cw[0]) * config.subsampling_rate
    prior = float(lam[y == 1].sum() / lam.sum())
    columns = np.asfortranarray(X)
    yf = y.astype(np.float64)

    def build_one(t: int) -> tuple[Tree, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(t,)))
        counts = rng.poisson(lam)
        grower = _TreeGrower(columns, yf, counts, config, rng, prior)
        tree = grower.grow()
        return tree, grower.importance

    if config.n_jobs == 1:
        results = [build_one(t) for t in range(config.num_trees)]
    else:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(build_one, range(config.num_trees)))

    importance = np.zeros(X.shape[1])
    for _, imp in results:
        importance += imp
    total = importance.sum()
    if total > 0.0:
        importance = importance / total
    return ForestModel(
        mode=mode,
        config=config,
        column_names=tuple(matrix.column_names),
        class_weights=cw,
        trees=tuple(tree for tree, _ in results),
        feature_importance=importance,
        prior=prior,
        n_training_rows=int(X.shape[0]),
    )


def predict_proba(model: ForestModel, rows: np.ndarray) -> np.ndarray:
    """Mean leaf positive-fraction over trees; one score in [0, 1] per row."""
    X = np.ascontiguousarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("rows must be 2-dimensional")
    if X.shape[1] != len(model.column_names):
        raise ValueError(
            f"row width {X.shape[1]} does not match model columns "
            f"({len(model.column_names)})"
        )
    if X.shape[0] == 0:
        return np.empty(0)
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree.predict(X)
    return acc / len(model.trees)


def to_json(model: ForestModel) -> str:
    """Serialize a model to JSON; from_json(to_json(m)) predicts identically."""
    payload = {
        "format": "roadrisk-forest",
        "version": 1,
        "mode": model.mode,
        "config": _config_to_dict(model.config),
        "column_names": list(model.column_names),
        "class_weights": {str(k): v for k, v in sorted(model.class_weights.items())},
        "prior": model.prior,
        "n_training_rows": model.n_training_rows,
        "feature_importance": [float(v) for v in model.feature_importance],
        "trees": [tree.to_dict() for tree in model.trees],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def from_json(text: str) -> ForestModel:
    payload = json.loads(text)
    if payload.get("format") != "roadrisk-forest":
        raise ValueError("not a forest model payload")
    config = _config_from_dict(payload["config"])
    return ForestModel(
        mode=payload["mode"],
        config=config,
        column_names=tuple(payload["column_names"]),
        class_weights={int(k): float(v) for k, v in payload["class_weights"].items()},
        trees=tuple(Tree.from_dict(d) for d in payload["trees"]),
        feature_importance=np.asarray(payload["feature_importance"], dtype=np.float64),
        prior=float(payload["prior"]),
        n_training_rows=int(payload["n_training_rows"]),
    )


def _config_to_dict(config: TrainConfig) -> dict[str, Any]:
    d = asdict(config)
    del d["n_jobs"]  # execution knob, not part of the model's identity
    if config.class_weights is not None:
        d["class_weights"] = {str(k): v for k, v in sorted(config.class_weights.items())}
    return d


def _config_from_dict(d: Mapping[str, Any]) -> TrainConfig:
    kwargs = dict(d)
    kwargs.pop("n_jobs", None)
    if kwargs.get("class_weights") is not None:
        kwargs["class_weights"] = {int(k): float(v) for k, v in kwargs["class_weights"].items()}
    return TrainConfig(**kwargs)
