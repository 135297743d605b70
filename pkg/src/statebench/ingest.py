"""Interaction-log loading, cleaning, and chronological splitting.

Raw event files come in as delimited text with (user, item, feedback,
timestamp) columns in arbitrary order.  Loading remaps external ids to
contiguous integer indices (first-appearance order) and sorts events by
timestamp with a stable sort, so ties keep file order.  All downstream
slices share the catalog built here.
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import SchemaError

_logger = logging.getLogger(__name__)

LOG_MAGIC = b"SBLOG001"


class Interaction(NamedTuple):
    user: int
    item: int
    feedback: float
    timestamp: int


@dataclass
class CsvSchema:
    """Column layout of a raw event file.

    Columns may be named (requires a header row) or given as 0-based
    positions (``header=False``).  ``feedback_col=None`` means the file
    carries no feedback column and every event gets feedback 1.0.
    """

    user_col: str | int = "user_id"
    item_col: str | int = "item_id"
    feedback_col: str | int | None = "rating"
    ts_col: str | int = "timestamp"
    delimiter: str = ","
    header: bool = True


@dataclass
class InteractionLog:
    """A timestamp-ordered block of events over a fixed id catalog.

    Events are stored columnar (one numpy array per field).  ``user_ids``
    and ``item_ids`` map contiguous indices back to the external ids they
    were loaded from; every slice taken from a log keeps the full catalog,
    so indices stay comparable across splits.  Arrays are frozen after
    construction -- build a new log instead of mutating one.
    """

    users: np.ndarray
    items: np.ndarray
    feedback: np.ndarray
    timestamps: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        self.users = np.asarray(self.users, dtype=np.int32)
        self.items = np.asarray(self.items, dtype=np.int32)
        self.feedback = np.asarray(self.feedback, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        n = len(self.users)
        if not (len(self.items) == len(self.feedback) == len(self.timestamps) == n):
            raise ValueError("column arrays have mismatched lengths")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("events must be sorted by timestamp")
        if n:
            if self.users.min() < 0 or self.users.max() >= len(self.user_ids):
                raise ValueError("user index outside catalog")
            if self.items.min() < 0 or self.items.max() >= len(self.item_ids):
                raise ValueError("item index outside catalog")
        for arr in (self.users, self.items, self.feedback, self.timestamps):
            arr.flags.writeable = False

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i: int) -> Interaction:
        return Interaction(
            int(self.users[i]),
            int(self.items[i]),
            float(self.feedback[i]),
            int(self.timestamps[i]),
        )

    def take(self, index: np.ndarray | slice) -> "InteractionLog":
        """New log holding the selected events, same catalog."""
        return InteractionLog(
            self.users[index],
            self.items[index],
            self.feedback[index],
            self.timestamps[index],
            self.user_ids,
            self.item_ids,
        )

    def distinct_items(self) -> np.ndarray:
        """Sorted item indices that occur in this block."""
        return np.unique(self.items)

    def distinct_users(self) -> np.ndarray:
        return np.unique(self.users)


@dataclass(frozen=True)
class SplitPlan:
    """Chronological split proportions for prequential evaluation."""

    warm_fraction: float = 0.5
    valid_fraction: float = 0.1
    n_windows: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.warm_fraction < 1.0:
            raise ValueError(f"warm_fraction must be in (0, 1), got {self.warm_fraction}")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError(f"valid_fraction must be in [0, 1), got {self.valid_fraction}")
        if self.n_windows < 1:
            raise ValueError(f"n_windows must be >= 1, got {self.n_windows}")


@dataclass
class LogSplit:
    """Outcome of :func:`split`: warm halves plus test windows."""

    warm_train: InteractionLog
    warm_valid: InteractionLog
    windows: list[InteractionLog] = field(default_factory=list)


def _resolve_columns(schema: CsvSchema, header_row: list[str] | None, path: Path) -> tuple[int, int, int | None, int]:
    cols = []
    for name, col in (
        ("user", schema.user_col),
        ("item", schema.item_col),
        ("feedback", schema.feedback_col),
        ("timestamp", schema.ts_col),
    ):
        if col is None:
            cols.append(None)
            continue
        if isinstance(col, int):
            cols.append(col)
            continue
        if header_row is None:
            raise SchemaError(f"{path}: named column {col!r} requires header=True")
        try:
            cols.append(header_row.index(col))
        except ValueError:
            raise SchemaError(f"{path}: column {col!r} not found in header {header_row!r}") from None
    return cols[0], cols[1], cols[2], cols[3]


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> InteractionLog:
    """Load a raw event file into an :class:`InteractionLog`.

    External ids become contiguous indices in first-appearance order and
    events are stable-sorted by timestamp.  An empty file yields an empty
    log with empty id maps.  Malformed rows (wrong field count, unparsable
    feedback/timestamp) raise :class:`SchemaError` naming the line.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    users: list[int] = []
    items: list[int] = []
    feedback: list[float] = []
    timestamps: list[int] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}

    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        header_row = None
        if schema.header:
            header_row = next(reader, None)
            if header_row is None:
                return InteractionLog(
                    np.empty(0, np.int32), np.empty(0, np.int32),
                    np.empty(0, np.float64), np.empty(0, np.int64), (), (),
                )
        u_col, i_col, f_col, t_col = _resolve_columns(schema, header_row, path)
        width = max(c for c in (u_col, i_col, f_col, t_col) if c is not None) + 1
        for lineno, row in enumerate(reader, start=2 if schema.header else 1):
            if not row:
                continue
            if len(row) < width:
                raise SchemaError(f"{path}:{lineno}: expected at least {width} fields, got {len(row)}")
            u_raw, i_raw = row[u_col].strip(), row[i_col].strip()
            try:
                fb = float(row[f_col]) if f_col is not None else 1.0
                ts = int(float(row[t_col]))
            except ValueError as e:
                raise SchemaError(f"{path}:{lineno}: {e}") from None
            uid = user_index.setdefault(u_raw, len(user_index))
            iid = item_index.setdefault(i_raw, len(item_index))
            users.append(uid)
            items.append(iid)
            feedback.append(fb)
            timestamps.append(ts)

    ts_arr = np.asarray(timestamps, dtype=np.int64)
    order = np.argsort(ts_arr, kind="stable")
    log = InteractionLog(
        np.asarray(users, dtype=np.int32)[order],
        np.asarray(items, dtype=np.int32)[order],
        np.asarray(feedback, dtype=np.float64)[order],
        ts_arr[order],
        tuple(user_index),
        tuple(item_index),
    )
    _logger.info("loaded %s: %d events, %d users, %d items", path, len(log), log.n_users, log.n_items)
    return log


def clean(log: InteractionLog) -> InteractionLog:
    """Drop exact duplicates and contradictory repeats.

    An exact duplicate is a repeated (user, item, feedback, timestamp)
    tuple; the first occurrence is kept.  A contradictory pair is the same
    (user, item, timestamp) appearing with different feedback values; all
    events of such a group are dropped.  The id catalog is untouched, so
    cleaning never renumbers anything and ``clean(clean(x)) == clean(x)``.
    """
    n = len(log)
    if n == 0:
        return log
    quad = np.stack(
        [log.users.astype(np.int64), log.items.astype(np.int64),
         log.timestamps, log.feedback.view(np.int64)],
        axis=1,
    )
    # first occurrence of each exact quadruple
    _, first_idx = np.unique(quad, axis=0, return_index=True)
    keep = np.zeros(n, dtype=bool)
    keep[first_idx] = True

    # groups sharing (user, item, timestamp) but with >1 distinct feedback
    trip = quad[:, :3]
    uniq_rows = quad[first_idx]
    uniq_trips, counts_u = np.unique(uniq_rows[:, :3], axis=0, return_counts=True)
    contradictory_groups = np.flatnonzero(counts_u > 1)
    if contradictory_groups.size:
        bad_trips = {tuple(r) for r in uniq_trips[contradictory_groups]}
        for i in range(n):
            if keep[i] and (int(trip[i, 0]), int(trip[i, 1]), int(trip[i, 2])) in bad_trips:
                keep[i] = False

    kept = log.take(np.flatnonzero(keep))
    dropped = n - len(kept)
    if dropped:
        _logger.info("clean: dropped %d of %d events", dropped, n)
    return kept


def split(log: InteractionLog, plan: SplitPlan) -> LogSplit:
    """Chronological warm/valid/test split.

    The first ``floor(warm_fraction * N)`` events form the warm half; the
    chronologically last ``floor(valid_fraction * warm)`` of those are held
    out for validation.  The remaining test half is cut into
    ``plan.n_windows`` contiguous windows whose sizes differ by at most
    one, with the earlier windows taking the extra event when the division
    is uneven.  Concatenating warm_train + warm_valid + windows restores
    the input event sequence exactly.
    """
    n = len(log)
    if n < 2 * plan.n_windows:
        raise ValueError(
            f"log has {n} events; need at least {2 * plan.n_windows} for {plan.n_windows} windows"
        )
    n_warm = int(n * plan.warm_fraction)
    n_valid = int(n_warm * plan.valid_fraction)
    warm_train = log.take(slice(0, n_warm - n_valid))
    warm_valid = log.take(slice(n_warm - n_valid, n_warm))

    n_test = n - n_warm
    base, extra = divmod(n_test, plan.n_windows)
    windows = []
    start = n_warm
    for w in range(plan.n_windows):
        size = base + (1 if w < extra else 0)
        windows.append(log.take(slice(start, start + size)))
        start += size
    assert start == n
    return LogSplit(warm_train, warm_valid, windows)


def filter_cold_items(windows: Sequence[InteractionLog], known_items: np.ndarray | set[int]) -> list[InteractionLog]:
    """Drop events whose item is outside ``known_items`` from each window.

    Window boundaries and inner event order are preserved; a window may
    come back empty.  Used to keep replay restricted to items the warm
    phase built arms for.
    """
    known = np.asarray(sorted(known_items), dtype=np.int64)
    out = []
    for w in windows:
        mask = np.isin(w.items, known)
        out.append(w.take(np.flatnonzero(mask)))
    return out


def save_log(log: InteractionLog, path: str | Path) -> None:
    """Write a log as a small columnar binary plus two id-map text files.

    ``<path>`` holds the arrays; ``<path>.users.tsv`` and
    ``<path>.items.tsv`` hold one ``index<TAB>external_id`` row per
    catalog entry.
    """
    path = Path(path)
    header = json.dumps({
        "n_events": len(log), "n_users": log.n_users, "n_items": log.n_items,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(LOG_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(np.ascontiguousarray(log.users, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(log.items, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(log.feedback, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(log.timestamps, dtype="<i8").tobytes())
    for suffix, ids in ((".users.tsv", log.user_ids), (".items.tsv", log.item_ids)):
        with open(str(path) + suffix, "w", encoding="utf-8") as fh:
            for idx, ext in enumerate(ids):
                fh.write(f"{idx}\t{ext}\n")


def load_log(path: str | Path) -> InteractionLog:
    """Inverse of :func:`save_log`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(LOG_MAGIC))
        if magic != LOG_MAGIC:
            raise SchemaError(f"{path}: not an interaction-log file")
        hlen = int.from_bytes(fh.read(4), "little")
        meta = json.loads(fh.read(hlen))
        n = meta["n_events"]
        users = np.frombuffer(fh.read(4 * n), dtype="<i4")
        items = np.frombuffer(fh.read(4 * n), dtype="<i4")
        feedback = np.frombuffer(fh.read(8 * n), dtype="<f8")
        timestamps = np.frombuffer(fh.read(8 * n), dtype="<i8")

    def read_ids(suffix: str, expect: int) -> tuple[str, ...]:
        ids = []
        with open(str(path) + suffix, encoding="utf-8") as fh:
            for line in fh:
                idx, ext = line.rstrip("\n").split("\t", 1)
                ids.append(ext)
        if len(ids) != expect:
            raise SchemaError(f"{path}{suffix}: expected {expect} ids, found {len(ids)}")
        return tuple(ids)

    return InteractionLog(
        users, items, feedback, timestamps,
        read_ids(".users.tsv", meta["n_users"]),
        read_ids(".items.tsv", meta["n_items"]),
    )
