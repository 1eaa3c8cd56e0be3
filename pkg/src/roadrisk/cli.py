"""Command-line entry point.

One subcommand per pipeline stage, plus `synth` for generating a
self-contained synthetic scenario (raw files + a ready run_config.json).
Stage commands read a single JSON config file; `--set section.key=value`
applies ad-hoc overrides without editing the file.

Exit codes: 0 success, 1 configuration/usage error, 2 data error (including
invoking a stage before its upstream stage), 3 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from datetime import date, timedelta
from pathlib import Path

from .config import RunConfig, load_run_config
from .errors import ConfigError, DataError
from .synth import SynthConfig, generate

log = logging.getLogger(__name__)

_STAGES = ("ingest", "sample", "featurize", "train", "evaluate", "importance", "report")

# fraction of the grid window used for training in generated scenarios
_SYNTH_TRAIN_FRACTION = 2 / 3
_SYNTH_SAMPLING_RATE = 0.002


class _Parser(argparse.ArgumentParser):
    """argparse reserves status 2 for usage errors; we map those to 1."""

    def error(self, message: str):  # noqa: D102 - argparse hook
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roadrisk", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--verbose", action="store_true", help="enable INFO-level logging"
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a synthetic scenario directory")
    synth.add_argument("--out", required=True, help="directory to write the scenario into")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--segments", type=int, default=200)
    synth.add_argument("--stations", type=int, default=5)
    synth.add_argument("--days", type=int, default=120)
    synth.add_argument("--start-date", type=date.fromisoformat, default=date(2021, 1, 1))
    synth.add_argument("--hotspot-fraction", type=float, default=0.05)
    synth.add_argument("--hotspot-multiplier", type=float, default=20.0)
    synth.add_argument("--base-rate", type=float, default=4e-4)
    synth.add_argument("--weather-effect", type=float, default=3.0)

    for name in _STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("-c", "--config", required=True, help="path to run_config.json")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (JSON-parsed); repeatable",
        )
    return parser


def scenario_run_config(cfg: SynthConfig) -> dict:
    """A run_config document wired to the files `synth` writes alongside it."""
    train_days = max(1, int(round(cfg.n_days * _SYNTH_TRAIN_FRACTION)))
    train_days = min(train_days, cfg.n_days - 1)
    return {
        "paths": {
            "roads": "roads.kml",
            "weather": "weather.csv",
            "collisions": "collisions.csv",
            "cache_root": "cache",
            "output_dir": "out",
        },
        "grid": {
            "start_date": cfg.start_date.isoformat(),
            "end_date": cfg.end_date.isoformat(),
            "sampling_rate": _SYNTH_SAMPLING_RATE,
            "seed": cfg.seed,
        },
        "split": {
            "train_end": (cfg.start_date + timedelta(days=train_days)).isoformat(),
        },
        "train": {"mode": "brf", "num_trees": 100, "seed": cfg.seed},
        "evaluate": {"target_recall": 0.85},
    }


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = SynthConfig(
            n_segments=args.segments,
            n_stations=args.stations,
            n_days=args.days,
            start_date=args.start_date,
            hotspot_fraction=args.hotspot_fraction,
            hotspot_multiplier=args.hotspot_multiplier,
            base_rate=args.base_rate,
            weather_effect=args.weather_effect,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dataset = generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "roads.kml").write_bytes(dataset.roads_kml)
    (out / "weather.csv").write_bytes(dataset.weather_csv)
    (out / "collisions.csv").write_bytes(dataset.collisions_csv)
    (out / "truth.json").write_text(
        json.dumps(dataset.truth, sort_keys=True, indent=2) + "\n"
    )
    (out / "run_config.json").write_text(
        json.dumps(scenario_run_config(cfg), sort_keys=True, indent=2) + "\n"
    )
    print(
        f"[synth] wrote scenario to {out}: {cfg.n_segments} segments, "
        f"{cfg.n_stations} stations, {cfg.n_days} days, "
        f"{dataset.truth['n_collisions']} collisions (seed {cfg.seed})"
    )
    print(f"[synth] next: roadrisk ingest -c {out / 'run_config.json'}")
    return 0


def _load(args: argparse.Namespace) -> RunConfig:
    try:
        return load_run_config(args.config, args.overrides)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "synth":
        return _cmd_synth(args)
    from . import pipeline

    cfg = _load(args)
    runner = {
        "ingest": pipeline.run_ingest,
        "sample": pipeline.run_sample,
        "featurize": pipeline.run_featurize,
        "train": pipeline.run_train,
        "evaluate": pipeline.run_evaluate,
        "importance": pipeline.run_importance,
        "report": pipeline.run_report,
    }[args.command]
    runner(cfg)
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception:  # noqa: BLE001 - last-resort: report and use the internal code
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
