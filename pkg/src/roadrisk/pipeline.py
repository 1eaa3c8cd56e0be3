"""Cached pipeline stages: ingest, sample, featurize, train, evaluate, report.

Each stage materializes its output under <cache_root>/<stage>/<hash>/ where
the hash covers the stage's own configuration plus the hashes of everything
it consumed, so stages chain naturally and edits invalidate exactly the
affected suffix of the pipeline. Invoking a stage whose upstream entry is
absent raises StageOrderError rather than silently recomputing the upstream.

All artifacts are written with deterministic formatting (repr floats, sorted
JSON keys, no wall-clock timestamps in report payloads), so a re-run with the
same inputs and config is byte-identical, including under n_jobs > 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import evaluation, forest, plots
from .cache import StageResult, cache_stage, file_sha256, load_stage
from .config import RunConfig
from .errors import DataError, StageOrderError
from .examples import Example, GridSpec, parse_collision_csv, positives, sample_negatives
from .features import FeatureMatrix, assemble, fit
from .road_network import GeoPoint, RoadNetwork, RoadSegment, parse_kml
from .weather import DEFAULT_WEATHER_COLUMNS, FIELD_ATTRS, WeatherTable, parse_weather_csv

_TS_FORMAT = dict(sep=" ", timespec="minutes")


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        v = float(v)  # numpy scalars repr as np.float64(...); builtin float round-trips
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _parse_ts(raw: str) -> datetime:
    return datetime.strptime(raw, "%Y-%m-%d %H:%M")


def _read_file(path: Path, kind: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"{kind} file not found: {path}") from exc


# ---------------------------------------------------------------------------
# payload (de)serialization


def _write_segments_csv(path: Path, net: RoadNetwork) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["segment_id", "street_name", "road_level", "length_m", "polyline"])
        for seg in net.segments:
            poly = ";".join(f"{repr(p.lat)} {repr(p.lon)}" for p in seg.polyline)
            w.writerow(
                [seg.segment_id, seg.street_name, seg.road_level, repr(seg.length_m), poly]
            )


def _segments_reader(cell_size_deg: float) -> Callable[[Path], RoadNetwork]:
    def read(path: Path) -> RoadNetwork:
        segments = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                points = tuple(
                    GeoPoint(*map(float, token.split())) for token in row["polyline"].split(";")
                )
                segments.append(
                    RoadSegment(
                        segment_id=row["segment_id"],
                        polyline=points,
                        street_name=row["street_name"],
                        road_level=int(row["road_level"]),
                    )
                )
        return RoadNetwork(segments, cell_size_deg=cell_size_deg)

    return read


_WEATHER_PAYLOAD_COLUMNS = list(DEFAULT_WEATHER_COLUMNS.values())


def _write_weather_csv(path: Path, table: WeatherTable) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_WEATHER_PAYLOAD_COLUMNS)
        for series in table:
            st = series.station
            for obs in series.observations:
                row = [
                    st.station_id,
                    obs.timestamp.isoformat(**_TS_FORMAT),
                    repr(st.location.lat),
                    repr(st.location.lon),
                ]
                for semantic, attr in FIELD_ATTRS.items():
                    v = getattr(obs, attr)
                    row.append("" if v is None else repr(v))
                row.append(",".join(obs.phenomena))
                w.writerow(row)


def _read_weather_csv(path: Path) -> WeatherTable:
    return parse_weather_csv(Path(path).read_bytes())


def _write_collisions_csv(path: Path, records: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["timestamp", "latitude", "longitude"])
        for rec in records:
            w.writerow(
                [
                    rec.timestamp.isoformat(**_TS_FORMAT),
                    repr(rec.location.lat),
                    repr(rec.location.lon),
                ]
            )


def _read_collisions_csv(path: Path):
    records, _warnings = parse_collision_csv(
        Path(path).read_bytes(),
        columns={"timestamp": "timestamp", "latitude": "latitude", "longitude": "longitude"},
    )
    return records


def _write_examples_csv(path: Path, examples: list[Example]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["segment_id", "timestamp", "label"])
        for e in examples:
            w.writerow([e.segment_id, e.timestamp.isoformat(**_TS_FORMAT), e.label])


def _read_examples_csv(path: Path) -> list[Example]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                Example(
                    segment_id=row["segment_id"],
                    timestamp=_parse_ts(row["timestamp"]),
                    label=int(row["label"]),
                )
            )
    return out


_FEATURES_MANIFEST = "features_manifest.json"
_BOOKKEEPING_PREFIX = ("segment_id", "timestamp", "split")
_BOOKKEEPING_SUFFIX = ("label", "weight")


def _features_writer(train_end: datetime, manifest: dict) -> Callable[[Path, FeatureMatrix], None]:
    def write(path: Path, matrix: FeatureMatrix) -> None:
        assert matrix.row_ids is not None
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(
                list(_BOOKKEEPING_PREFIX) + list(matrix.column_names) + list(_BOOKKEEPING_SUFFIX)
            )
            for i, (segment_id, ts) in enumerate(matrix.row_ids):
                split = "train" if ts < train_end else "test"
                w.writerow(
                    [segment_id, ts.isoformat(**_TS_FORMAT), split]
                    + [_fmt(v) for v in matrix.rows[i]]
                    + [int(matrix.labels[i]), _fmt(float(matrix.weights[i]))]
                )
        (path.parent / _FEATURES_MANIFEST).write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )

    return write


def _read_features(path: Path) -> FeatureMatrix:
    manifest_path = Path(path).parent / _FEATURES_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing {manifest_path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n_prefix, n_suffix = len(_BOOKKEEPING_PREFIX), len(_BOOKKEEPING_SUFFIX)
        column_names = tuple(header[n_prefix : len(header) - n_suffix])
        rows, labels, weights, ids = [], [], [], []
        for row in reader:
            ids.append((row[0], _parse_ts(row[1])))
            rows.append(
                [math.nan if cell == "" else float(cell) for cell in row[n_prefix:-n_suffix]]
            )
            labels.append(int(row[-2]))
            weights.append(float(row[-1]))
    manifest = json.loads(manifest_path.read_text())
    return FeatureMatrix(
        column_names=column_names,
        rows=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int8),
        weights=np.asarray(weights, dtype=np.float64),
        row_ids=tuple(ids),
        dropped_unknown_segment=int(manifest.get("dropped_unknown_segment", 0)),
    )


def _write_model(path: Path, model) -> None:
    if isinstance(model, forest.ForestModel):
        Path(path).write_text(forest.to_json(model))
    else:
        Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n")


def _read_model(path: Path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") == "roadrisk-baseline":
        return evaluation.BaselineModel.from_dict(payload)
    return forest.from_json(json.dumps(payload))


def _write_json_payload(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _read_json_payload(path: Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# stage keys


def _roads_key(cfg: RunConfig) -> dict:
    return {"digest": file_sha256(_ensure_exists(cfg.roads_path, "roads")), "parser": "kml-v1"}


def _weather_key(cfg: RunConfig) -> dict:
    return {
        "digest": file_sha256(_ensure_exists(cfg.weather_path, "weather")),
        "columns": dict(cfg.weather_columns) if cfg.weather_columns else "default",
    }


def _collisions_key(cfg: RunConfig) -> dict:
    return {
        "digest": file_sha256(_ensure_exists(cfg.collisions_path, "collisions")),
        "columns": dict(cfg.collision_columns) if cfg.collision_columns else "default",
    }


def _sample_key(cfg: RunConfig, roads_hash: str, collisions_hash: str) -> dict:
    return {
        "roads": roads_hash,
        "collisions": collisions_hash,
        "start_date": cfg.start_date.isoformat(),
        "end_date": cfg.end_date.isoformat(),
        "sampling_rate": cfg.sampling_rate,
        "seed": cfg.grid_seed,
        "match_radius_m": cfg.match_radius_m,
    }


def _features_key(cfg: RunConfig, sample_hash: str, roads_hash: str, weather_hash: str) -> dict:
    return {
        "sample": sample_hash,
        "roads": roads_hash,
        "weather": weather_hash,
        "train_end": cfg.train_end.isoformat(),
        "spec": {
            "enabled": list(cfg.enabled_features),
            "ema_alpha": cfg.ema_alpha,
            "idw_exponent": cfg.idw_exponent,
            "cutoff_m": cfg.cutoff_m,
            "ref_meridian_deg": cfg.ref_meridian_deg,
        },
    }


def _train_dict(cfg: RunConfig) -> dict:
    tc = cfg.to_train_config()
    d = {
        "num_trees": tc.num_trees,
        "max_depth": tc.max_depth,
        "min_samples_leaf": tc.min_samples_leaf,
        "features_per_split": tc.features_per_split,
        "subsampling_rate": tc.subsampling_rate,
        "seed": tc.seed,
    }
    if tc.class_weights is not None:
        d["class_weights"] = {str(k): v for k, v in sorted(tc.class_weights.items())}
    return d


def _train_key(cfg: RunConfig, features_hash: str) -> dict:
    return {"features": features_hash, "mode": cfg.mode, "train": _train_dict(cfg)}


def _evaluate_key(cfg: RunConfig, train_hash: str, features_hash: str, prevalence: float) -> dict:
    return {
        "model": train_hash,
        "features": features_hash,
        "target_recall": cfg.target_recall,
        "prevalence": prevalence,
        "train_end": cfg.train_end.isoformat(),
    }


def _ensure_exists(path: Path, kind: str) -> Path:
    if not Path(path).is_file():
        raise DataError(f"{kind} file not found: {path}")
    return path


def _require(
    cfg: RunConfig, stage: str, key: dict, reader, payload_name: str, command: str
) -> StageResult:
    result = load_stage(cfg.cache_root, stage, key, reader, payload_name)
    if result is None:
        raise StageOrderError(
            f"no cached output for stage '{stage}' under the current config; "
            f"run `roadrisk {command}` first"
        )
    return result


def _status(stage: str, result: StageResult, detail: str) -> None:
    state = "hit " if result.hit else "miss"
    print(f"[{stage}] cache {state} {result.entry_hash}  {detail}")


# ---------------------------------------------------------------------------
# stages


@dataclass
class IngestOutputs:
    roads: StageResult
    weather: StageResult
    collisions: StageResult


def run_ingest(cfg: RunConfig) -> IngestOutputs:
    """Parse raw roads/weather/collisions into normalized cached tables."""

    def produce_roads() -> RoadNetwork:
        net = parse_kml(_read_file(cfg.roads_path, "roads"), cell_size_deg=cfg.cell_size_deg)
        for w in net.warnings:
            print(f"[roads] warning: {w}")
        return net

    roads = cache_stage(
        cfg.cache_root,
        "roads",
        _roads_key(cfg),
        produce_roads,
        _write_segments_csv,
        _segments_reader(cfg.cell_size_deg),
        payload_name="segments.csv",
    )
    net: RoadNetwork = roads.value
    lengths = [seg.length_m for seg in net.segments]
    mean_len = sum(lengths) / len(lengths) if lengths else 0.0
    short = sum(1 for v in lengths if v < 200.0) / len(lengths) if lengths else 0.0
    _status(
        "roads",
        roads,
        f"{len(net)} segments, mean length {mean_len:.1f} m, {100 * short:.1f}% shorter than 200 m",
    )

    def produce_weather() -> WeatherTable:
        table = parse_weather_csv(_read_file(cfg.weather_path, "weather"), cfg.weather_columns)
        for w in table.warnings:
            print(f"[weather] warning: {w}")
        return table

    weather = cache_stage(
        cfg.cache_root,
        "weather",
        _weather_key(cfg),
        produce_weather,
        _write_weather_csv,
        _read_weather_csv,
        payload_name="weather.csv",
    )
    n_obs = sum(len(s.observations) for s in weather.value)
    _status("weather", weather, f"{len(weather.value)} stations, {n_obs} observations")

    def produce_collisions():
        records, warnings = parse_collision_csv(
            _read_file(cfg.collisions_path, "collisions"), cfg.collision_columns
        )
        for w in warnings:
            print(f"[collisions] warning: {w}")
        return records

    collisions = cache_stage(
        cfg.cache_root,
        "collisions",
        _collisions_key(cfg),
        produce_collisions,
        _write_collisions_csv,
        _read_collisions_csv,
        payload_name="collisions.csv",
    )
    _status("collisions", collisions, f"{len(collisions.value)} records")
    return IngestOutputs(roads=roads, weather=weather, collisions=collisions)


def _require_roads(cfg: RunConfig) -> StageResult:
    return _require(
        cfg, "roads", _roads_key(cfg), _segments_reader(cfg.cell_size_deg), "segments.csv", "ingest"
    )


def _require_weather(cfg: RunConfig) -> StageResult:
    return _require(cfg, "weather", _weather_key(cfg), _read_weather_csv, "weather.csv", "ingest")


def _require_collisions(cfg: RunConfig) -> StageResult:
    return _require(
        cfg, "collisions", _collisions_key(cfg), _read_collisions_csv, "collisions.csv", "ingest"
    )


def run_sample(cfg: RunConfig) -> StageResult:
    """Build the labeled example set over the configured grid window."""
    roads = _require_roads(cfg)
    collisions = _require_collisions(cfg)
    net: RoadNetwork = roads.value
    key = _sample_key(cfg, roads.entry_hash, collisions.entry_hash)

    def produce() -> list[Example]:
        start_ts, end_ts = _window_ts(cfg)
        in_window = [
            rec for rec in collisions.value if start_ts <= rec.timestamp < end_ts
        ]
        skipped = len(collisions.value) - len(in_window)
        pos, report = positives(in_window, net, cfg.match_radius_m)
        grid = GridSpec(
            start_date=cfg.start_date,
            end_date=cfg.end_date,
            segment_ids=tuple(seg.segment_id for seg in net.segments),
            sampling_rate=cfg.sampling_rate,
            seed=cfg.grid_seed,
        )
        neg = sample_negatives(grid, pos)
        print(
            f"[sample] collisions: {report.total} in window ({skipped} outside), "
            f"{report.matched} matched, {report.unmatched} unmatched, "
            f"{report.collapsed} collapsed duplicates"
        )
        print(f"[sample] examples: {len(pos)} positive, {len(neg)} negative")
        merged = sorted(pos + neg, key=lambda e: e.key)
        return merged

    result = cache_stage(
        cfg.cache_root, "sample", key, produce, _write_examples_csv, _read_examples_csv,
        payload_name="examples.csv",
    )
    n_pos = sum(1 for e in result.value if e.label == 1)
    _status("sample", result, f"{len(result.value)} examples ({n_pos} positive)")
    return result


def _window_ts(cfg: RunConfig) -> tuple[datetime, datetime]:
    return (
        datetime(cfg.start_date.year, cfg.start_date.month, cfg.start_date.day),
        datetime(cfg.end_date.year, cfg.end_date.month, cfg.end_date.day),
    )


def run_featurize(cfg: RunConfig) -> StageResult:
    """Fit feature encoders on the training window and assemble all rows."""
    roads = _require_roads(cfg)
    weather = _require_weather(cfg)
    sample = _require(
        cfg,
        "sample",
        _sample_key(cfg, roads.entry_hash, _require_collisions(cfg).entry_hash),
        _read_examples_csv,
        "examples.csv",
        "sample",
    )
    key = _features_key(cfg, sample.entry_hash, roads.entry_hash, weather.entry_hash)
    train_end_ts = cfg.train_window[1]

    def produce() -> FeatureMatrix:
        spec = fit(cfg.to_feature_spec(), sample.value, roads.value)
        table = weather.value.with_ema(cfg.ema_alpha)
        matrix = assemble(sample.value, roads.value, table, spec)
        if matrix.dropped_unknown_segment:
            print(
                f"[featurize] dropped {matrix.dropped_unknown_segment} example(s) on "
                "segments missing from the network"
            )
        # stash the manifest on the matrix so the writer can see it
        produce.manifest = spec.to_manifest() | {
            "rows": int(len(matrix.labels)),
            "dropped_unknown_segment": matrix.dropped_unknown_segment,
            "bookkeeping_columns": list(_BOOKKEEPING_PREFIX) + list(_BOOKKEEPING_SUFFIX),
        }
        return matrix

    produce.manifest = {}
    result = cache_stage(
        cfg.cache_root,
        "features",
        key,
        produce,
        lambda path, matrix: _features_writer(train_end_ts, produce.manifest)(path, matrix),
        _read_features,
        payload_name="features.csv",
    )
    matrix: FeatureMatrix = result.value
    _status(
        "features",
        result,
        f"{matrix.rows.shape[0]} rows x {matrix.rows.shape[1]} columns",
    )
    return result


def _split_masks(matrix: FeatureMatrix, train_end: datetime) -> tuple[np.ndarray, np.ndarray]:
    assert matrix.row_ids is not None
    ts = np.array([rid[1] for rid in matrix.row_ids])
    train_mask = ts < train_end
    return train_mask, ~train_mask


def run_train(cfg: RunConfig) -> StageResult:
    """Train the configured model (rf/brf forest, or the count baseline)."""
    roads = _require_roads(cfg)
    weather = _require_weather(cfg)
    sample_hash = _require(
        cfg,
        "sample",
        _sample_key(cfg, roads.entry_hash, _require_collisions(cfg).entry_hash),
        _read_examples_csv,
        "examples.csv",
        "sample",
    ).entry_hash
    features = _require(
        cfg,
        "features",
        _features_key(cfg, sample_hash, roads.entry_hash, weather.entry_hash),
        _read_features,
        "features.csv",
        "featurize",
    )
    key = _train_key(cfg, features.entry_hash)

    def produce():
        matrix: FeatureMatrix = features.value
        train_mask, _ = _split_masks(matrix, cfg.train_window[1])
        train_matrix = matrix.subset(train_mask)
        if train_matrix.rows.shape[0] == 0:
            raise DataError("no training rows before split.train_end")
        if cfg.mode == "baseline":
            if "accident_count" not in matrix.column_names:
                raise DataError("baseline mode needs the accident_count feature enabled")
            return evaluation.fit_baseline(
                train_matrix.col("accident_count"), train_matrix.labels
            )
        try:
            return forest.train(train_matrix, cfg.to_train_config(), mode=cfg.mode)
        except ValueError as exc:
            raise DataError(f"training failed: {exc}") from exc

    result = cache_stage(
        cfg.cache_root, "train", key, produce, _write_model, _read_model,
        payload_name="model.json",
    )
    model = result.value
    if isinstance(model, forest.ForestModel):
        detail = f"{cfg.mode} forest, {len(model.trees)} trees"
    else:
        detail = "count-threshold baseline"
    _status("train", result, detail)
    return result


def _resolve_prevalence(cfg: RunConfig, net_size: int, matrix: FeatureMatrix) -> tuple[float, str]:
    if cfg.prevalence is not None:
        return cfg.prevalence, "config"
    n_cells = net_size * cfg.n_grid_hours()
    n_pos = int((matrix.labels == 1).sum())
    if n_pos == 0 or n_cells == 0:
        raise DataError("cannot derive prevalence: no positives or empty grid")
    return n_pos / n_cells, "derived"


def run_evaluate(cfg: RunConfig) -> StageResult:
    """Score the held-out window and assemble the evaluation payload."""
    roads = _require_roads(cfg)
    weather = _require_weather(cfg)
    sample_hash = _require(
        cfg,
        "sample",
        _sample_key(cfg, roads.entry_hash, _require_collisions(cfg).entry_hash),
        _read_examples_csv,
        "examples.csv",
        "sample",
    ).entry_hash
    features = _require(
        cfg,
        "features",
        _features_key(cfg, sample_hash, roads.entry_hash, weather.entry_hash),
        _read_features,
        "features.csv",
        "featurize",
    )
    train = _require(
        cfg, "train", _train_key(cfg, features.entry_hash), _read_model, "model.json", "train"
    )
    matrix: FeatureMatrix = features.value
    prevalence, prevalence_source = _resolve_prevalence(cfg, len(roads.value), matrix)
    key = _evaluate_key(cfg, train.entry_hash, features.entry_hash, prevalence)

    def produce() -> dict:
        train_mask, test_mask = _split_masks(matrix, cfg.train_window[1])
        test_matrix = matrix.subset(test_mask)
        n_test = test_matrix.rows.shape[0]
        if n_test == 0:
            raise DataError("no test rows at or after split.train_end")
        if len(set(test_matrix.labels.tolist())) < 2:
            raise DataError(
                "test window contains a single class; ROC evaluation is undefined "
                "(widen the window or raise the sampling rate)"
            )
        model = train.value
        if isinstance(model, forest.ForestModel):
            scores = forest.predict_proba(model, test_matrix.rows)
            model_kind = model.mode
        else:
            scores = np.asarray(model.score(test_matrix.col("accident_count")))
            model_kind = "baseline"
        scored = evaluation.ScoredSet(scores=scores, labels=test_matrix.labels)

        baseline_auc = None
        if "accident_count" in matrix.column_names:
            train_matrix = matrix.subset(train_mask)
            baseline = evaluation.fit_baseline(
                train_matrix.col("accident_count"), train_matrix.labels
            )
            base_scores = np.asarray(baseline.score(test_matrix.col("accident_count")))
            _, baseline_auc = evaluation.roc_curve(
                evaluation.ScoredSet(scores=base_scores, labels=test_matrix.labels)
            )

        report = evaluation.build_report(
            scored,
            target_recall=cfg.target_recall,
            prevalence=prevalence,
            model_kind=model_kind,
            baseline_auc=baseline_auc,
        )
        n_train = int(train_mask.sum())
        payload = {
            "report": report.to_dict(),
            "context": {
                "mode": cfg.mode,
                "grid": {
                    "start_date": cfg.start_date.isoformat(),
                    "end_date": cfg.end_date.isoformat(),
                    "sampling_rate": cfg.sampling_rate,
                    "seed": cfg.grid_seed,
                },
                "train_end": cfg.train_end.isoformat(),
                "n_train": n_train,
                "n_train_pos": int(matrix.labels[train_mask].sum()),
                "prevalence_source": prevalence_source,
                "feature_columns": list(matrix.column_names),
                "train": _train_dict(cfg),
            },
        }
        return payload

    result = cache_stage(
        cfg.cache_root, "evaluate", key, produce, _write_json_payload, _read_json_payload,
        payload_name="report.json",
    )
    rep = result.value["report"]
    base = rep.get("baseline_auc")
    base_text = f", baseline AUC {base:.4f}" if base is not None else ""
    _status(
        "evaluate",
        result,
        f"AUC {rep['auc_roc']:.4f}{base_text}, extrapolated precision "
        f"{rep['extrapolated_precision']:.6f} at recall {rep['operating_point']['recall']:.3f}",
    )
    return result


def importance_tables(model: forest.ForestModel) -> tuple[list, list]:
    """(full, excluding-accident-count) importance tables, descending."""
    pairs = list(zip(model.column_names, (float(v) for v in model.feature_importance)))
    full = sorted(pairs, key=lambda kv: (-kv[1], kv[0]))
    rest = [(name, v) for name, v in pairs if name != "accident_count"]
    total = sum(v for _, v in rest)
    if total > 0:
        rest = [(name, v / total) for name, v in rest]
    rest = sorted(rest, key=lambda kv: (-kv[1], kv[0]))
    return full, rest


def run_importance(cfg: RunConfig) -> list[Path]:
    """Print and persist the trained forest's feature-importance tables."""
    roads = _require_roads(cfg)
    weather = _require_weather(cfg)
    sample_hash = _require(
        cfg,
        "sample",
        _sample_key(cfg, roads.entry_hash, _require_collisions(cfg).entry_hash),
        _read_examples_csv,
        "examples.csv",
        "sample",
    ).entry_hash
    features_hash = _require(
        cfg,
        "features",
        _features_key(cfg, sample_hash, roads.entry_hash, weather.entry_hash),
        _read_features,
        "features.csv",
        "featurize",
    ).entry_hash
    train = _require(
        cfg, "train", _train_key(cfg, features_hash), _read_model, "model.json", "train"
    )
    model = train.value
    if not isinstance(model, forest.ForestModel):
        raise DataError("importance is only defined for rf/brf forests, not the baseline")

    full, excl = importance_tables(model)
    width = max(len(name) for name, _ in full)
    print("feature importance (all features):")
    for name, v in full:
        print(f"  {name:<{width}}  {v:.6f}")
    print("feature importance (excluding accident_count, renormalized):")
    for name, v in excl:
        print(f"  {name:<{width}}  {v:.6f}")

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _write_importance_csv(out / "importance.csv", full),
        _write_importance_csv(out / "importance_excl_accident_count.csv", excl),
    ]
    plots.save_importance_svg(out / "importance.svg", full)
    written.append(out / "importance.svg")
    return written


def run_report(cfg: RunConfig) -> list[Path]:
    """Materialize report.json, curve CSVs, SVG charts, and the model copy."""
    roads = _require_roads(cfg)
    weather = _require_weather(cfg)
    sample_hash = _require(
        cfg,
        "sample",
        _sample_key(cfg, roads.entry_hash, _require_collisions(cfg).entry_hash),
        _read_examples_csv,
        "examples.csv",
        "sample",
    ).entry_hash
    features = _require(
        cfg,
        "features",
        _features_key(cfg, sample_hash, roads.entry_hash, weather.entry_hash),
        _read_features,
        "features.csv",
        "featurize",
    )
    train = _require(
        cfg, "train", _train_key(cfg, features.entry_hash), _read_model, "model.json", "train"
    )
    prevalence, _ = _resolve_prevalence(cfg, len(roads.value), features.value)
    evaluated = _require(
        cfg,
        "evaluate",
        _evaluate_key(cfg, train.entry_hash, features.entry_hash, prevalence),
        _read_json_payload,
        "report.json",
        "evaluate",
    )

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    payload = evaluated.value
    model = train.value

    doc = {
        "schema": "roadrisk-report",
        "version": 1,
        "evaluation": payload["report"],
        "context": payload["context"],
    }
    if isinstance(model, forest.ForestModel):
        full, excl = importance_tables(model)
        doc["feature_importance"] = [{"feature": n, "importance": v} for n, v in full]
        doc["feature_importance_excluding_accident_count"] = [
            {"feature": n, "importance": v} for n, v in excl
        ]
        doc["model"] = {
            "kind": model.mode,
            "num_trees": len(model.trees),
            "columns": list(model.column_names),
        }
    else:
        doc["feature_importance"] = []
        doc["feature_importance_excluding_accident_count"] = []
        doc["model"] = {"kind": "baseline"}

    report_path = out / "report.json"
    report_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    written.append(report_path)

    rep = payload["report"]
    written.append(_write_points_csv(out / "roc.csv", ["fpr", "tpr", "threshold"], rep["roc_points"]))
    written.append(
        _write_points_csv(out / "pr.csv", ["recall", "precision", "threshold"], rep["pr_points"])
    )
    written.append(
        _write_points_csv(
            out / "thresholds.csv",
            ["threshold", "recall", "precision", "fpr"],
            rep["threshold_points"],
        )
    )
    plots.save_roc_svg(out / "roc.svg", rep["roc_points"], rep["auc_roc"])
    plots.save_pr_svg(out / "pr.svg", rep["pr_points"])
    plots.save_threshold_svg(out / "thresholds.svg", rep["threshold_points"])
    written += [out / "roc.svg", out / "pr.svg", out / "thresholds.svg"]

    if isinstance(model, forest.ForestModel):
        full, excl = importance_tables(model)
        written.append(_write_importance_csv(out / "importance.csv", full))
        written.append(
            _write_importance_csv(out / "importance_excl_accident_count.csv", excl)
        )
        plots.save_importance_svg(out / "importance.svg", full)
        written.append(out / "importance.svg")

    model_copy = out / "model.json"
    model_copy.write_bytes((train.entry_dir / "model.json").read_bytes())
    written.append(model_copy)
    manifest_src = features.entry_dir / _FEATURES_MANIFEST
    if manifest_src.exists():
        manifest_copy = out / _FEATURES_MANIFEST
        manifest_copy.write_bytes(manifest_src.read_bytes())
        written.append(manifest_copy)

    print(f"[report] wrote {len(written)} artifact(s) to {out}")
    return written


def _write_points_csv(path: Path, header: list[str], points: list) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for p in points:
            w.writerow([_fmt(float(v)) for v in p])
    return path


def _write_importance_csv(path: Path, table: list[tuple[str, float]]) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["feature", "importance"])
        for name, v in table:
            w.writerow([name, _fmt(float(v))])
    return path
