"""Results ledger and pivoting into stats-ready tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import RunSummary
from .stats import ResultTable, TestReport

LEDGER_COLUMNS = [
    "dataset", "embedding", "state", "policy", "events",
    "ndcg_cumulative", "mf_seed", "bandit_seed", "config_json",
]


def append_summary(path: str | Path, summary: RunSummary, stamp: dict) -> None:
    """Append one run to the ledger CSV, creating it with a header."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(LEDGER_COLUMNS)
        writer.writerow([
            summary.dataset, summary.embedding, summary.state_kind,
            summary.policy_kind, summary.events, repr(summary.final_ndcg),
            summary.seeds.get("mf", ""), summary.seeds.get("bandit", ""),
            json.dumps(stamp, sort_keys=True),
        ])


def read_rows(path: str | Path) -> list[dict]:
    """Read a ledger or fixture CSV into dict rows (stamp comments skipped)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            rows.append(row)
    return rows


def build_result_table(rows: list[dict], treatment: str, block_cols: list[str],
                       score_col: str) -> ResultTable:
    """Pivot long-form rows into the N-blocks x K-treatments table.

    Blocks are keyed by ``block_cols`` tuples; every block must hold
    exactly one score per treatment.  Duplicate or missing cells fail
    with the offending (block, treatment) named.
    """
    if not rows:
        raise ValueError("no rows to pivot")
    for col in [treatment, score_col, *block_cols]:
        if col not in rows[0]:
            raise ValueError(f"column {col!r} not present in rows (have {sorted(rows[0])})")
    treatments: list[str] = []
    blocks: list[tuple] = []
    cells: dict[tuple, dict[str, float]] = {}
    for row in rows:
        key = tuple(row[c] for c in block_cols)
        t = row[treatment]
        if t not in treatments:
            treatments.append(t)
        if key not in cells:
            blocks.append(key)
            cells[key] = {}
        if t in cells[key]:
            raise ValueError(f"duplicate cell: block {key}, treatment {t!r}")
        try:
            cells[key][t] = float(row[score_col])
        except ValueError:
            raise ValueError(f"block {key}, treatment {t!r}: bad score {row[score_col]!r}") from None
    scores = np.empty((len(blocks), len(treatments)))
    for bi, key in enumerate(blocks):
        for ti, t in enumerate(treatments):
            if t not in cells[key]:
                raise ValueError(f"missing cell: block {key}, treatment {t!r}")
            scores[bi, ti] = cells[key][t]
    return ResultTable(blocks, treatments, scores)


def write_report_csv(path: str | Path, report: TestReport, stamp: dict | None = None) -> None:
    """Key/value report CSV: statistic, p, CD, per-treatment mean ranks,
    and pairwise significance flags."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(stamp or {}):
            fh.write(f"# {key} = {(stamp or {})[key]}\n")
        fh.write("metric,value\n")
        fh.write(f"chi2_r,{report.chi2_r!r}\n")
        fh.write(f"p_value,{report.p_value!r}\n")
        fh.write(f"cd,{report.cd!r}\n")
        fh.write(f"alpha,{report.alpha!r}\n")
        fh.write(f"n_blocks,{report.n_blocks}\n")
        for name, rank in report.mean_ranks.items():
            fh.write(f"rank_{name},{rank!r}\n")
        for (a, b), sig in report.significant.items():
            fh.write(f"sig_{a}_vs_{b},{sig}\n")
