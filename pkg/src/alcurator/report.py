"""Delimited output files: per-seed history, aggregates, derived tables.

All files are written atomically (temp file in the target directory, then
rename) so a crash never leaves a partial file, and all floats use repr-exact
formatting so identical runs produce byte-identical outputs.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .metrics import IterationRecord, SavingsCurve

HISTORY_HEADER = (
    "strategy,seed,t,train_size,mae_test,mae_test_inrange,"
    "tpr_test,fpr_test,tpr_held,fpr_held,n_inrange_train,config_digest"
)

_AGG_METRICS = (
    "mae_test",
    "mae_test_inrange",
    "tpr_test",
    "fpr_test",
    "tpr_held",
    "fpr_held",
    "n_inrange_train",
    "inrange_pct",
)

AGGREGATE_HEADER = (
    "strategy,train_size,n_seeds,"
    + ",".join(f"{m}_mean,{m}_sd" for m in _AGG_METRICS)
    + ",config_digest"
)

SAVINGS_HEADER = (
    "train_size,pct_search,pct_reference,extra_pct,"
    "search_size_at_level,computations_saved"
)

NOISE_GRID_HEADER = (
    "noise,train_size,n_validation,mae_validation,is_argmin,config_digest"
)


def atomic_write_text(path: str, text: str) -> None:
    """Write text to `path` through a same-directory temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".partial-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{float(value):.17g}"


def fmt_int(value: Optional[int]) -> str:
    return "" if value is None else str(int(value))


def format_history_csv(
    records: Sequence[IterationRecord], digest: str
) -> str:
    """Per-iteration rows, ordered by (seed, t)."""
    lines = [HISTORY_HEADER]
    for rec in sorted(records, key=lambda r: (r.seed, r.t)):
        lines.append(
            ",".join(
                (
                    rec.strategy,
                    str(rec.seed),
                    str(rec.t),
                    str(rec.train_size),
                    fmt_float(rec.mae_test),
                    fmt_float(rec.mae_test_inrange),
                    fmt_float(rec.tpr_test),
                    fmt_float(rec.fpr_test),
                    fmt_float(rec.tpr_held),
                    fmt_float(rec.fpr_held),
                    fmt_int(rec.n_inrange_train),
                    digest,
                )
            )
        )
    return "\n".join(lines) + "\n"


def _mean_sd(values: list[Optional[float]]) -> tuple[str, str]:
    present = [v for v in values if v is not None]
    if not present:
        return "", ""
    arr = np.array(sorted(present), dtype=float)
    mean = float(np.mean(arr))
    sd = float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0
    return fmt_float(mean), fmt_float(sd)


def format_aggregate_csv(
    records: Sequence[IterationRecord],
    digest: str,
    total_inrange: Optional[int] = None,
) -> str:
    """Mean and sample-sd of each metric across seeds, per train size.

    Rows are keyed by iteration, so seeds that stopped early simply drop
    out of later rows (n_seeds records how many contributed). The result
    is invariant to the order records are passed in.
    """
    by_t: dict[int, list[IterationRecord]] = {}
    for rec in records:
        by_t.setdefault(rec.t, []).append(rec)
    lines = [AGGREGATE_HEADER]
    for t in sorted(by_t):
        group = by_t[t]
        sizes = {rec.train_size for rec in group}
        if len(sizes) != 1:
            raise ValueError(
                f"iteration {t} has inconsistent train sizes across seeds: "
                f"{sorted(sizes)}"
            )
        strategy = group[0].strategy
        cells = [strategy, str(group[0].train_size), str(len(group))]
        for metric in _AGG_METRICS:
            if metric == "inrange_pct":
                if total_inrange:
                    values = [
                        100.0 * rec.n_inrange_train / total_inrange
                        if rec.n_inrange_train is not None
                        else None
                        for rec in group
                    ]
                else:
                    values = []
            else:
                values = [
                    None if getattr(rec, metric) is None else float(getattr(rec, metric))
                    for rec in group
                ]
            cells.extend(_mean_sd(list(values)))
        cells.append(digest)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_aggregate_csv(text: str) -> list[dict[str, str]]:
    """Read an aggregate table back as one dict per row."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != AGGREGATE_HEADER:
        raise ValueError("not an aggregate table (header mismatch)")
    columns = AGGREGATE_HEADER.split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(columns):
            raise ValueError(f"malformed aggregate row: {line!r}")
        rows.append(dict(zip(columns, cells)))
    return rows


def format_savings_csv(curve: SavingsCurve) -> str:
    lines = [SAVINGS_HEADER]
    for i in range(len(curve.train_sizes)):
        lines.append(
            ",".join(
                (
                    str(int(curve.train_sizes[i])),
                    fmt_float(curve.pct_search[i]),
                    fmt_float(curve.pct_reference[i]),
                    fmt_float(curve.extra_pct[i]),
                    fmt_float(curve.search_size_at_level[i]),
                    fmt_float(curve.saved[i]),
                )
            )
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class NoiseGridRow:
    """Validation MAE of one fixed-split fit at one noise level."""

    noise: float
    train_size: int
    n_validation: int
    mae_validation: float


def format_noise_grid_csv(
    rows: Sequence[NoiseGridRow], argmin_noise: float, digest: str
) -> str:
    lines = [NOISE_GRID_HEADER]
    for row in sorted(rows, key=lambda r: r.noise):
        lines.append(
            ",".join(
                (
                    fmt_float(row.noise),
                    str(row.train_size),
                    str(row.n_validation),
                    fmt_float(row.mae_validation),
                    "1" if row.noise == argmin_noise else "0",
                    digest,
                )
            )
        )
    return "\n".join(lines) + "\n"
