"""Run configuration: one JSON document drives every pipeline stage.

The document is nested by stage (paths / grid / split / ingest / features /
train / evaluate); load_run_config flattens it into a validated RunConfig.
Every invariant violation raises ConfigError before any work starts. Relative
paths resolve against the config file's directory, so a scenario folder is
self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ConfigError
from .features import FEATURE_COLUMNS, DEFAULT_REF_MERIDIAN_DEG, FeatureSpec
from .forest import MODES, TrainConfig
from .weather import DEFAULT_CUTOFF_M, DEFAULT_EMA_ALPHA, DEFAULT_IDW_EXPONENT

TRAIN_MODES = MODES + ("baseline",)

_SECTION_KEYS: dict[str, set[str]] = {
    "paths": {"roads", "weather", "collisions", "cache_root", "output_dir"},
    "grid": {"start_date", "end_date", "sampling_rate", "seed"},
    "split": {"train_end"},
    "ingest": {"weather_columns", "collision_columns", "cell_size_deg", "match_radius_m"},
    "features": {"enabled", "ema_alpha", "idw_exponent", "cutoff_m", "ref_meridian_deg"},
    "train": {
        "mode",
        "num_trees",
        "max_depth",
        "min_samples_leaf",
        "features_per_split",
        "subsampling_rate",
        "class_weights",
        "seed",
        "n_jobs",
    },
    "evaluate": {"target_recall", "prevalence"},
}


@dataclass(frozen=True)
class RunConfig:
    roads_path: Path
    weather_path: Path
    collisions_path: Path
    cache_root: Path
    output_dir: Path
    start_date: date
    end_date: date
    train_end: date
    sampling_rate: float = 0.001
    grid_seed: int = 0
    weather_columns: Mapping[str, str] | None = None
    collision_columns: Mapping[str, str] | None = None
    cell_size_deg: float = 0.005
    match_radius_m: float = 100.0
    enabled_features: tuple[str, ...] = FEATURE_COLUMNS
    ema_alpha: float = DEFAULT_EMA_ALPHA
    idw_exponent: float = DEFAULT_IDW_EXPONENT
    cutoff_m: float = DEFAULT_CUTOFF_M
    ref_meridian_deg: float = DEFAULT_REF_MERIDIAN_DEG
    mode: str = "brf"
    num_trees: int = 100
    max_depth: int = 18
    min_samples_leaf: int = 1
    features_per_split: int | str = "sqrt"
    subsampling_rate: float = 1.0
    class_weights: Mapping[int, float] | None = None
    train_seed: int = 0
    n_jobs: int = 1
    target_recall: float = 0.85
    prevalence: float | None = None

    def __post_init__(self) -> None:
        if not self.start_date < self.train_end < self.end_date:
            raise ConfigError(
                "window ordering violated: need start_date < train_end < end_date, got "
                f"{self.start_date} / {self.train_end} / {self.end_date} "
                "(the test window must come strictly after the training window)"
            )
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"train.mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ConfigError(f"grid.sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if not 0.0 <= self.target_recall <= 1.0:
            raise ConfigError(
                f"evaluate.target_recall must be in [0, 1], got {self.target_recall}"
            )
        if self.prevalence is not None and not 0.0 < self.prevalence < 1.0:
            raise ConfigError(
                f"evaluate.prevalence must be in (0, 1), got {self.prevalence}"
            )
        if self.match_radius_m <= 0:
            raise ConfigError(f"ingest.match_radius_m must be positive, got {self.match_radius_m}")
        if self.cell_size_deg <= 0:
            raise ConfigError(f"ingest.cell_size_deg must be positive, got {self.cell_size_deg}")
        try:
            self.to_train_config()
            self.to_feature_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def train_window(self) -> tuple[datetime, datetime]:
        return (_day_start(self.start_date), _day_start(self.train_end))

    @property
    def test_window(self) -> tuple[datetime, datetime]:
        return (_day_start(self.train_end), _day_start(self.end_date))

    def n_grid_hours(self) -> int:
        return int((_day_start(self.end_date) - _day_start(self.start_date)).total_seconds() // 3600)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            num_trees=self.num_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            features_per_split=self.features_per_split,
            subsampling_rate=self.subsampling_rate,
            class_weights=dict(self.class_weights) if self.class_weights else None,
            seed=self.train_seed,
            n_jobs=self.n_jobs,
        )

    def to_feature_spec(self) -> FeatureSpec:
        return FeatureSpec(
            train_window=self.train_window,
            enabled=tuple(self.enabled_features),
            ema_alpha=self.ema_alpha,
            idw_exponent=self.idw_exponent,
            cutoff_m=self.cutoff_m,
            ref_meridian_deg=self.ref_meridian_deg,
        )


def _day_start(d: date) -> datetime:
    return datetime(d.year, d.month, d.day)


def _parse_date(raw: Any, where: str) -> date:
    if not isinstance(raw, str):
        raise ConfigError(f"{where} must be an ISO date string, got {raw!r}")
    try:
        return date.fromisoformat(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    """Apply repeated --set section.key=value entries (values parsed as JSON)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-object")
        node[parts[-1]] = value
    return doc


def parse_run_config(doc: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config root must be a JSON object")
    unknown_sections = sorted(set(doc) - set(_SECTION_KEYS))
    if unknown_sections:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown_sections)}")
    for section, keys in _SECTION_KEYS.items():
        got = doc.get(section, {})
        if not isinstance(got, Mapping):
            raise ConfigError(f"config section {section!r} must be an object")
        unknown = sorted(set(got) - keys)
        if unknown:
            raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")

    paths = doc.get("paths", {})
    missing = sorted(k for k in ("roads", "weather", "collisions", "cache_root", "output_dir") if k not in paths)
    if missing:
        raise ConfigError(f"paths section missing: {', '.join(missing)}")
    grid = doc.get("grid", {})
    for k in ("start_date", "end_date"):
        if k not in grid:
            raise ConfigError(f"grid section missing: {k}")
    split = doc.get("split", {})
    if "train_end" not in split:
        raise ConfigError("split section missing: train_end")

    def resolve(raw: Any, where: str) -> Path:
        if not isinstance(raw, str) or not raw:
            raise ConfigError(f"{where} must be a non-empty path string")
        p = Path(raw)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return p

    ingest = doc.get("ingest", {})
    features = doc.get("features", {})
    train = doc.get("train", {})
    evaluate = doc.get("evaluate", {})

    class_weights = train.get("class_weights")
    if class_weights is not None:
        try:
            class_weights = {int(k): float(v) for k, v in class_weights.items()}
        except (AttributeError, ValueError) as exc:
            raise ConfigError(f"train.class_weights must map labels to numbers: {exc}") from exc

    enabled = features.get("enabled", list(FEATURE_COLUMNS))
    if not isinstance(enabled, (list, tuple)) or not all(isinstance(c, str) for c in enabled):
        raise ConfigError("features.enabled must be a list of column names")

    try:
        return RunConfig(
            roads_path=resolve(paths["roads"], "paths.roads"),
            weather_path=resolve(paths["weather"], "paths.weather"),
            collisions_path=resolve(paths["collisions"], "paths.collisions"),
            cache_root=resolve(paths["cache_root"], "paths.cache_root"),
            output_dir=resolve(paths["output_dir"], "paths.output_dir"),
            start_date=_parse_date(grid["start_date"], "grid.start_date"),
            end_date=_parse_date(grid["end_date"], "grid.end_date"),
            train_end=_parse_date(split["train_end"], "split.train_end"),
            sampling_rate=float(grid.get("sampling_rate", 0.001)),
            grid_seed=int(grid.get("seed", 0)),
            weather_columns=ingest.get("weather_columns"),
            collision_columns=ingest.get("collision_columns"),
            cell_size_deg=float(ingest.get("cell_size_deg", 0.005)),
            match_radius_m=float(ingest.get("match_radius_m", 100.0)),
            enabled_features=tuple(enabled),
            ema_alpha=float(features.get("ema_alpha", DEFAULT_EMA_ALPHA)),
            idw_exponent=float(features.get("idw_exponent", DEFAULT_IDW_EXPONENT)),
            cutoff_m=float(features.get("cutoff_m", DEFAULT_CUTOFF_M)),
            ref_meridian_deg=float(features.get("ref_meridian_deg", DEFAULT_REF_MERIDIAN_DEG)),
            mode=str(train.get("mode", "brf")),
            num_trees=int(train.get("num_trees", 100)),
            max_depth=int(train.get("max_depth", 18)),
            min_samples_leaf=int(train.get("min_samples_leaf", 1)),
            features_per_split=train.get("features_per_split", "sqrt"),
            subsampling_rate=float(train.get("subsampling_rate", 1.0)),
            class_weights=class_weights,
            train_seed=int(train.get("seed", 0)),
            n_jobs=int(train.get("n_jobs", 1)),
            target_recall=float(evaluate.get("target_recall", 0.85)),
            prevalence=(None if evaluate.get("prevalence") is None else float(evaluate["prevalence"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_run_config(path: Path | str, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_run_config(doc, base_dir=path.resolve().parent)
