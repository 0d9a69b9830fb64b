"""Deterministic report emission: runs.csv, summary.csv and a plot-ready
curves.tsv (accuracy and speedup against compression factor). UTF-8, LF
endings, fixed column order, so identical inputs give identical bytes.
"""

import csv
import os
from dataclasses import dataclass

from .stats import StatsSummary

RUNS_COLUMNS = ("config_id", "seed", "subsample_fraction",
                "final_test_accuracy", "wall_time_s")
SUMMARY_COLUMNS = ("method", "delta_acc", "max", "min", "mean", "std",
                   "t_stat", "p_value")
CURVES_COLUMNS = ("compression_factor", "method", "mean_acc", "speedup")
BENCH_COLUMNS = ("compression_factor", "seconds_per_batch", "speedup")


@dataclass
class MethodSummary:
    method: str
    summary: StatsSummary
    delta_acc: float | None = None
    compression_factor: float | None = None
    speedup: float | None = None


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, columns, rows, delimiter=","):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_report(records, summaries, out_dir):
    """Emit runs.csv (one row per run), summary.csv (one row per method,
    Table-style columns) and curves.tsv; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    runs_path = os.path.join(out_dir, "runs.csv")
    _write_rows(runs_path, RUNS_COLUMNS,
                [(r.config_id, r.seed, r.subsample_fraction,
                  r.final_test_accuracy, r.wall_time_s) for r in records])

    summary_path = os.path.join(out_dir, "summary.csv")
    _write_rows(summary_path, SUMMARY_COLUMNS,
                [(m.method, m.delta_acc, m.summary.max, m.summary.min,
                  m.summary.mean, m.summary.std, m.summary.t_stat,
                  m.summary.p_value) for m in summaries])

    curves_path = os.path.join(out_dir, "curves.tsv")
    _write_rows(curves_path, CURVES_COLUMNS,
                [(m.compression_factor, m.method, m.summary.mean, m.speedup)
                 for m in summaries if m.compression_factor is not None],
                delimiter="\t")
    return {"runs": runs_path, "summary": summary_path,
            "curves": curves_path}


def write_bench_csv(path, reports):
    """Bench table: compression factor (vs the first, reference entry),
    seconds per batch, speedup."""
    reference = reports[0].param_count if reports else 1
    rows = [(report.param_count and reference / report.param_count,
             report.mean_batch_latency_s, report.speedup_vs_reference)
            for report in reports]
    _write_rows(path, BENCH_COLUMNS, rows)


def read_runs_csv(path):
    """Rows of runs.csv as dicts with typed fields."""
    from .harness import RunRecord
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(RunRecord(
                config_id=row["config_id"], seed=int(row["seed"]),
                subsample_fraction=float(row["subsample_fraction"]),
                epoch_curve=[],
                final_test_accuracy=float(row["final_test_accuracy"]),
                wall_time_s=float(row["wall_time_s"])))
    return records
