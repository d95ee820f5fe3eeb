"""Command-line interface.

Subcommands:
  run         execute (or resume) an active-learning run from a config file
  synth       generate a synthetic pool and write its feature/label tables
  noise-grid  pick the observation-noise level by validation error
  curves      join a search run and a reference run into a savings table

Exit codes: 0 on success (including a run suspended while waiting for
labels), 1 on runtime errors, 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from . import __version__, loop, plotting
from .config import ConfigError, config_digest, read_config
from .metrics import savings
from .moldata import format_label_table
from .report import (
    atomic_write_text,
    format_noise_grid_csv,
    format_savings_csv,
    parse_aggregate_csv,
)


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = read_config(args.config)
    result = loop.run_experiment(cfg, args.out, resume=args.resume)
    print(f"config digest: {result.digest}")
    print(f"run directory: {result.run_dir}")
    for seed in sorted(result.seed_csv_paths):
        print(f"wrote {result.seed_csv_paths[seed]}")
    print(f"wrote {result.aggregate_path}")
    curve_path = plotting.render_learning_curve(
        result.records,
        os.path.join(result.run_dir, "learning_curve.png"),
        title=f"{cfg.strategy} on {cfg.dataset.name}",
    )
    if curve_path:
        print(f"wrote {curve_path}")
    if result.target is not None:
        cls_path = plotting.render_classification_curves(
            result.records,
            os.path.join(result.run_dir, "classification.png"),
            title=f"{cfg.strategy} on {cfg.dataset.name}",
        )
        if cls_path:
            print(f"wrote {cls_path}")
    failed = False
    for outcome in result.outcomes:
        if outcome.error is not None:
            _fail(f"seed {outcome.seed}: {outcome.error}")
            failed = True
        elif outcome.pending_message is not None:
            print(f"seed {outcome.seed}: awaiting labels")
            print(f"  {outcome.pending_message}")
        else:
            assert outcome.state is not None
            print(
                f"seed {outcome.seed}: {outcome.state.status} "
                f"(train size {len(outcome.state.pool.train)}, "
                f"{len(outcome.state.history)} iterations)"
            )
    if failed:
        return 1
    if result.pending_seeds and args.resume:
        # An explicit resume expected the labels to be there by now.
        _fail(
            "labels still missing for seed(s) "
            + ", ".join(str(s) for s in result.pending_seeds)
        )
        return 1
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = read_config(args.config)
    if cfg.dataset.source != "synthetic":
        raise ConfigError(
            "dataset.source: the synth command needs dataset.source = synthetic"
        )
    dataset = loop.load_dataset(cfg)
    target = loop.resolve_target(cfg, dataset)
    os.makedirs(args.out, exist_ok=True)
    from .descriptor import DescriptorMatrix, format_feature_table

    matrix = DescriptorMatrix(
        values=dataset.features, config_hash=dataset.feature_hash
    )
    features_path = os.path.join(args.out, "features.tsv")
    labels_path = os.path.join(args.out, "labels.tsv")
    atomic_write_text(
        features_path, format_feature_table(dataset.ids, matrix)
    )
    labels = dataset.label_array()
    atomic_write_text(labels_path, format_label_table(dataset.ids, labels))
    hist_path = plotting.render_label_histogram(
        labels,
        os.path.join(args.out, "labels_hist.png"),
        epsilon=None if target is None else target.epsilon,
        title=cfg.dataset.name,
    )
    print(f"generated {len(dataset)} molecules ({cfg.dataset.name})")
    print(
        f"labels: min {labels.min():.4g}, mean {labels.mean():.4g}, "
        f"max {labels.max():.4g}"
    )
    if target is not None:
        n_in = int(np.sum(labels > target.epsilon))
        print(
            f"threshold {target.epsilon:.6g}: {n_in} in range "
            f"({100.0 * n_in / len(labels):.1f}%)"
        )
    print(f"wrote {features_path}")
    print(f"wrote {labels_path}")
    print(f"wrote {hist_path}")
    return 0


def cmd_noise_grid(args: argparse.Namespace) -> int:
    cfg = read_config(args.config)
    levels = None
    if args.grid:
        try:
            levels = tuple(
                float(tok) for tok in args.grid.split(",") if tok.strip()
            )
        except ValueError:
            raise ConfigError(
                f"--grid: expected comma-separated numbers, got {args.grid!r}"
            ) from None
    result = loop.run_noise_grid(cfg, levels)
    text = format_noise_grid_csv(
        result.rows, result.argmin_noise, config_digest(cfg)
    )
    atomic_write_text(args.out, text)
    figure_path = plotting.render_noise_grid(
        result.rows, result.argmin_noise, os.path.splitext(args.out)[0] + ".png"
    )
    for row in result.rows:
        print(f"noise {row.noise:g}: validation MAE {row.mae_validation:.5g} eV")
    print(
        f"argmin: noise = {result.argmin_noise:g} "
        f"(validation MAE {result.argmin_mae:.5g} eV over "
        f"{result.n_validation} molecules, train size {result.train_size})"
    )
    print(f"wrote {args.out}")
    print(f"wrote {figure_path}")
    return 0


SEARCH_STRATEGY = "property_search"
REFERENCE_STRATEGY = "random"


def _progress_curve(path: str, rows: list[dict]) -> list[tuple[int, float]]:
    curve = []
    for row in rows:
        if not row["inrange_pct_mean"]:
            raise ConfigError(
                f"{path} has no in-range progress column; rerun with a target"
            )
        curve.append((int(row["train_size"]), float(row["inrange_pct_mean"])))
    return curve


def _discover_aggregates(runs_dir: str) -> dict[str, tuple[str, list[dict]]]:
    """Map strategy id -> (aggregate path, its rows) under a runs directory."""
    if not os.path.isdir(runs_dir):
        raise ConfigError(f"--runs: {runs_dir} is not a directory")
    candidates = []
    top = os.path.join(runs_dir, "aggregate.csv")
    if os.path.exists(top):
        candidates.append(top)
    for entry in sorted(os.listdir(runs_dir)):
        path = os.path.join(runs_dir, entry, "aggregate.csv")
        if os.path.exists(path):
            candidates.append(path)
    if not candidates:
        raise ConfigError(
            f"--runs: no aggregate.csv found under {runs_dir}; "
            f"finish the runs first"
        )
    by_strategy: dict[str, tuple[str, list[dict]]] = {}
    for path in candidates:
        with open(path, "r", encoding="utf-8") as fh:
            rows = parse_aggregate_csv(fh.read())
        for strategy in sorted({row["strategy"] for row in rows}):
            mine = [row for row in rows if row["strategy"] == strategy]
            if strategy in by_strategy:
                raise ConfigError(
                    f"strategy {strategy} appears in both "
                    f"{by_strategy[strategy][0]} and {path}; keep one"
                )
            by_strategy[strategy] = (path, mine)
    return by_strategy


def cmd_curves(args: argparse.Namespace) -> int:
    by_strategy = _discover_aggregates(args.runs)
    missing = [
        s for s in (SEARCH_STRATEGY, REFERENCE_STRATEGY) if s not in by_strategy
    ]
    if missing:
        raise ConfigError(
            "need both strategies "
            f"({SEARCH_STRATEGY} and {REFERENCE_STRATEGY}) under {args.runs}; "
            "missing: " + ", ".join(missing)
        )
    search_path, search_rows = by_strategy[SEARCH_STRATEGY]
    ref_path, ref_rows = by_strategy[REFERENCE_STRATEGY]
    try:
        curve = savings(
            _progress_curve(search_path, search_rows),
            _progress_curve(ref_path, ref_rows),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    atomic_write_text(args.out, format_savings_csv(curve))
    figure_path = plotting.render_savings(
        curve, os.path.splitext(args.out)[0] + ".png"
    )
    print(f"search:    {search_path}")
    print(f"reference: {ref_path}")
    print(f"wrote {args.out}")
    print(f"wrote {figure_path}")
    best = int(np.nanargmax(curve.extra_pct))
    print(
        f"largest advantage: +{curve.extra_pct[best]:.1f}% in-range at "
        f"train size {int(curve.train_sizes[best])}"
    )
    finite = np.isfinite(curve.saved)
    if np.any(finite):
        idx = int(np.nanargmax(np.where(finite, curve.saved, -np.inf)))
        print(
            f"largest saving: {curve.saved[idx]:.0f} labels at the "
            f"reference's train size {int(curve.train_sizes[idx])}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alcurator",
        description=(
            "Grow molecular training sets by active learning and report "
            "what the curation saves."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute or resume a curation run")
    p_run.add_argument("--config", required=True, help="config file path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument(
        "--resume",
        action="store_true",
        help="continue from checkpoints in the output directory",
    )
    p_run.set_defaults(func=cmd_run)

    p_synth = sub.add_parser(
        "synth", help="generate a synthetic pool (features + labels tables)"
    )
    p_synth.add_argument("--config", required=True, help="config file path")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_noise = sub.add_parser(
        "noise-grid",
        help="pick the observation-noise level by validation error",
    )
    p_noise.add_argument("--config", required=True, help="config file path")
    p_noise.add_argument(
        "--grid",
        help="comma-separated noise levels (default: the configured grid)",
    )
    p_noise.add_argument("--out", required=True, help="output CSV file")
    p_noise.set_defaults(func=cmd_noise_grid)

    p_curves = sub.add_parser(
        "curves",
        help="join search and reference runs into a savings table",
    )
    p_curves.add_argument(
        "--runs",
        required=True,
        help="directory holding the finished runs' digest directories",
    )
    p_curves.add_argument("--out", required=True, help="output CSV file")
    p_curves.set_defaults(func=cmd_curves)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
