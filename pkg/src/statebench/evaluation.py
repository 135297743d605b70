"""Prequential (test-then-train) replay and NDCG@k accounting.

The online phase walks the test windows chronologically.  For every
event the bandit ranks the eligible arms from the user's *current*
context, the rank of the actually-consumed item is scored with binary
single-relevant-item NDCG, and only then does the event feed back into
the arm and the user's history.  Nothing from the future ever reaches a
context, which is the property the whole benchmark hangs on.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bandits
from .bandits import ArmTable, Policy, rank_of_item, warm_start
from .embeddings import (ALS, EmbeddingSpace, grid_search_embeddings,
                         load_space, train_als, train_bpr)
from .ingest import InteractionLog, clean, filter_cold_items, load_csv, load_log, split
from .state import ITEM_CONCAT, StateSpec, build_state, empty_history, update_history

_logger = logging.getLogger(__name__)


@dataclass
class WindowMetrics:
    window: int
    events: int
    ndcg_mean: float
    ndcg_cumulative: float


@dataclass
class RunSummary:
    """One experiment cell: its identity, tuning, and outcome."""

    dataset: str
    embedding: str
    state_kind: str
    policy_kind: str
    hyperparams: dict
    events: int
    final_ndcg: float
    windows: list[WindowMetrics] = field(default_factory=list)
    wall_seconds: float = 0.0
    seeds: dict = field(default_factory=dict)


def ndcg_at_k(rank_of_truth: int | None, k: int) -> float:
    """Binary NDCG@k with a single relevant item: 1/log2(rank+1), miss -> 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rank_of_truth is None:
        return 0.0
    if not 1 <= rank_of_truth <= k:
        raise ValueError(f"rank {rank_of_truth} outside [1, {k}]")
    return 1.0 / float(np.log2(rank_of_truth + 1))


def advance_histories(log: InteractionLog, spec: StateSpec, space: EmbeddingSpace,
                      histories: dict, consumed: dict) -> None:
    """Push a block of events through histories/consumed sets, no arm updates."""
    for e in range(len(log)):
        u = int(log.users[e])
        hist = histories.get(u)
        if hist is None:
            hist = histories[u] = empty_history(spec)
        it = int(log.items[e])
        update_history(hist, it, space)
        consumed.setdefault(u, set()).add(it)


def run_window(window: InteractionLog, policy: Policy, arms: ArmTable,
               spec: StateSpec, space: EmbeddingSpace, histories: dict,
               k: int = 20, *, rng: np.random.Generator | None = None,
               consumed: dict | None = None, exclude_seen: bool = True,
               window_index: int = 1, prior_events: int = 0,
               prior_ndcg_sum: float = 0.0, event_sink: list | None = None,
               context_probe=None, neg_samples: int = 0) -> WindowMetrics:
    """Replay one test window and aggregate its NDCG@k.

    Pass one shared ``rng`` (and the running ``prior_*`` totals) across
    windows of a run so cumulative values and random draws chain
    correctly.  ``event_sink``, when given, receives one
    (event_index, user, item, rank_or_None, ndcg) tuple per event;
    ``context_probe(user, x)`` sees every context right before scoring.
    ``neg_samples`` > 0 additionally updates that many uniformly drawn
    arms with reward 0 after each event (extra generator draws included).
    """
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    consumed = {} if consumed is None else consumed
    total = 0.0
    n = len(window)
    for e in range(n):
        u = int(window.users[e])
        it = int(window.items[e])
        try:
            hist = histories.get(u)
            if hist is None:
                hist = histories[u] = empty_history(spec)
            x = build_state(spec, space, u, hist)
            if context_probe is not None:
                context_probe(u, x)
            exclude = consumed.get(u, ()) if exclude_seen else ()
            rank = rank_of_item(policy, arms, x, k, it, exclude, rng)
            nd = ndcg_at_k(rank, k)
            pos = arms._pos.get(it)
            if pos is None:
                raise KeyError(f"no arm for item {it} (cold items must be filtered)")
            arms.update_at(pos, x, 1.0)
            for _ in range(neg_samples):
                arms.update_at(int(rng.integers(0, len(arms))), x, 0.0)
            update_history(hist, it, space)
            if exclude_seen:
                consumed.setdefault(u, set()).add(it)
        except Exception as err:
            raise type(err)(f"window {window_index} event {e}: {err}") from err
        total += nd
        if event_sink is not None:
            event_sink.append((prior_events + e, u, it, rank, nd))
    mean = total / n if n else 0.0
    denom = prior_events + n
    cumulative = (prior_ndcg_sum + total) / denom if denom else 0.0
    return WindowMetrics(window_index, n, mean, cumulative)


# ---------------------------------------------------------------------------
# full experiment
# ---------------------------------------------------------------------------

@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as e:
        raise RuntimeError(f"stage {name}: {e}") from e


def _train_embeddings(cfg, warm_train: InteractionLog, warm_valid: InteractionLog) -> EmbeddingSpace:
    if cfg.mf_snapshot:
        space = load_space(cfg.mf_snapshot)
        if space.n_users != warm_train.n_users or space.n_items != warm_train.n_items:
            raise ValueError(
                f"snapshot catalog {space.n_users}x{space.n_items} does not match "
                f"log catalog {warm_train.n_users}x{warm_train.n_items}")
        return space
    if cfg.mf_grid is not None:
        space, _report = grid_search_embeddings(
            cfg.mf_model, cfg.mf_grid, warm_train, warm_valid,
            conf_weight=cfg.conf_weight, seed=cfg.mf_seed, k=cfg.k)
        return space
    full = _concat(warm_train, warm_valid)
    p = cfg.mf_params
    if cfg.mf_model == ALS:
        return train_als(full, p["d"], p["reg"], p["epochs"], cfg.conf_weight, cfg.mf_seed)
    return train_bpr(full, p["d"], p["lr"], p["reg"], p["epochs"], cfg.mf_seed)


def _concat(a: InteractionLog, b: InteractionLog) -> InteractionLog:
    return InteractionLog(
        np.concatenate([a.users, b.users]),
        np.concatenate([a.items, b.items]),
        np.concatenate([a.feedback, b.feedback]),
        np.concatenate([a.timestamps, b.timestamps]),
        a.user_ids, a.item_ids,
    )


def _arm_items(warm_train: InteractionLog, max_arms: int) -> np.ndarray:
    items = warm_train.distinct_items()
    if max_arms and len(items) > max_arms:
        counts = np.bincount(warm_train.items, minlength=warm_train.n_items)[items]
        # most popular first, ascending item index inside count ties
        order = np.lexsort((items, -counts))
        items = np.sort(items[order[:max_arms]])
    return items


def _stamp_lines(stamp: dict) -> list[str]:
    return [f"# {key} = {stamp[key]}" for key in sorted(stamp)]


def write_windows_csv(path: Path, stamp: dict, metrics: list[WindowMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _stamp_lines(stamp):
            fh.write(line + "\n")
        fh.write("window,events,ndcg_mean,ndcg_cumulative\n")
        for m in metrics:
            fh.write(f"{m.window},{m.events},{m.ndcg_mean!r},{m.ndcg_cumulative!r}\n")


def write_events_csv(path: Path, stamp: dict, rows: list[tuple]) -> None:
    """Per-event log, gzipped with a pinned mtime so bytes are reproducible."""
    buf = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
        text = io.TextIOWrapper(gz, encoding="utf-8", newline="\n")
        for line in _stamp_lines(stamp):
            text.write(line + "\n")
        text.write("event,user,item,rank,ndcg\n")
        for ev, u, it, rank, nd in rows:
            text.write(f"{ev},{u},{it},{'' if rank is None else rank},{nd!r}\n")
        text.flush()
        text.detach()
    path.write_bytes(buf.getvalue())


def read_windows_csv(path: str | Path) -> tuple[dict, list[WindowMetrics]]:
    stamp: dict = {}
    metrics: list[WindowMetrics] = []
    with open(path, encoding="utf-8") as fh:
        header_seen = False
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if " = " in body:
                    key, val = body.split(" = ", 1)
                    stamp[key.strip()] = val
                continue
            if not line:
                continue
            if not header_seen:
                header_seen = True
                continue
            w, ev, mean, cum = line.split(",")
            metrics.append(WindowMetrics(int(w), int(ev), float(mean), float(cum)))
    return stamp, metrics


def run_experiment(cfg, *, context_probe=None) -> RunSummary:
    """Execute one full cell: ingest -> split -> embeddings -> cold filter
    -> warm start -> windowed replay -> persist.

    Fully deterministic given the config's seeds; wall-clock time is kept
    out of the CSV artifacts (it lives in run_meta.json) so identical
    runs produce identical bytes.
    """
    t0 = time.perf_counter()
    with _stage("ingest"):
        if str(cfg.data_path).endswith(".ilog"):
            log = load_log(cfg.data_path)
        else:
            log = load_csv(cfg.data_path, cfg.schema)
        log = clean(log)
    with _stage("split"):
        parts = split(log, cfg.plan)
        warm_train, warm_valid = parts.warm_train, parts.warm_valid
    with _stage("embeddings"):
        space = _train_embeddings(cfg, warm_train, warm_valid)
        spec = StateSpec(cfg.state_kind, space.d, cfg.state_h)
    with _stage("cold-filter"):
        arm_items = _arm_items(warm_train, cfg.max_arms)
        windows = filter_cold_items(parts.windows, arm_items)
    with _stage("warm-start"):
        arms = bandits.init_arms(arm_items, spec.dim(), cfg.lambda_ridge)
        policy = cfg.policy
        histories, consumed = warm_start(policy, arms, warm_train, spec, space)
        advance_histories(warm_valid, spec, space, histories, consumed)
        warm_updates = arms.total_updates()
    with _stage("replay"):
        rng = np.random.default_rng(policy.rng_seed)
        metrics: list[WindowMetrics] = []
        event_rows: list[tuple] = []
        done = 0
        ndcg_sum = 0.0
        for wi, wlog in enumerate(windows, start=1):
            wm = run_window(
                wlog, policy, arms, spec, space, histories, cfg.k,
                rng=rng, consumed=consumed, exclude_seen=cfg.exclude_seen,
                window_index=wi, prior_events=done, prior_ndcg_sum=ndcg_sum,
                event_sink=event_rows, context_probe=context_probe,
                neg_samples=cfg.neg_samples)
            metrics.append(wm)
            done += wm.events
            ndcg_sum += wm.ndcg_mean * wm.events
            _logger.info("window %d/%d: events=%d ndcg=%.5f cumulative=%.5f",
                         wi, len(windows), wm.events, wm.ndcg_mean, wm.ndcg_cumulative)

    summary = RunSummary(
        dataset=cfg.dataset,
        embedding=cfg.mf_model,
        state_kind=cfg.state_kind,
        policy_kind=policy.kind,
        hyperparams={
            "d": space.d, "h": cfg.state_h, "lambda": cfg.lambda_ridge,
            "policy_param": policy.param(), "mf": space.params,
        },
        events=done,
        final_ndcg=metrics[-1].ndcg_cumulative if metrics else 0.0,
        windows=metrics,
        wall_seconds=time.perf_counter() - t0,
        seeds={"mf": cfg.mf_seed, "bandit": policy.rng_seed},
    )

    if cfg.out_dir is not None:
        with _stage("persist"):
            run_dir = Path(cfg.out_dir) / cfg.dataset / f"{cfg.mf_model}-{cfg.state_kind}-{policy.kind}"
            run_dir.mkdir(parents=True, exist_ok=True)
            stamp = cfg.stamp()
            write_windows_csv(run_dir / "windows.csv", stamp, metrics)
            write_events_csv(run_dir / "events.csv.gz", stamp, event_rows)
            meta = {
                "wall_seconds": summary.wall_seconds,
                "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "warm_updates": warm_updates,
                "online_updates": arms.total_updates() - warm_updates,
                "config": stamp,
            }
            (run_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            if getattr(cfg, "append_ledger", True):
                from .results import append_summary
                append_summary(Path(cfg.out_dir) / "summary.csv", summary, stamp)
    return summary


# ---------------------------------------------------------------------------
# bandit/policy tuning on the warm half
# ---------------------------------------------------------------------------

POLICY_GRIDS = {
    bandits.LINUCB: ("alpha", (0.1, 0.5, 1.0)),
    bandits.LINGREEDY: ("epsilon", (0.05, 0.1, 0.2)),
    bandits.LINTS: ("v", (0.1, 0.5, 1.0)),
}
H_GRID = (3, 5, 10)


def tune_bandit(space: EmbeddingSpace, warm_train: InteractionLog,
                warm_valid: InteractionLog, state_kind: str, policy_kind: str,
                lambda_ridge: float = 1.0, k: int = 20, exclude_seen: bool = True,
                seed: int = 0, param_values=None, h_values=None
                ) -> tuple[Policy, StateSpec, list[dict]]:
    """Grid-search the exploration parameter (and h for item_concat).

    Each candidate warm-starts on warm_train and replays warm_valid
    prequentially (with updates); the pair with the best validation mean
    NDCG@k wins, ties resolved toward earlier grid entries.
    """
    param_name, defaults = POLICY_GRIDS[policy_kind]
    params = tuple(param_values) if param_values is not None else defaults
    # h only enters the item_concat state; other kinds search the flat grid once
    if state_kind == ITEM_CONCAT:
        hs = tuple(h_values) if h_values is not None else H_GRID
    else:
        hs = (5,)
    report = []
    best = (-1.0, None, None)
    arm_items = warm_train.distinct_items()
    valid_eval = filter_cold_items([warm_valid], arm_items)[0]
    for h in hs:
        spec = StateSpec(state_kind, space.d, h)
        for value in params:
            policy = Policy(policy_kind, rng_seed=seed, **{param_name: value})
            arms = bandits.init_arms(arm_items, spec.dim(), lambda_ridge)
            histories, consumed = warm_start(policy, arms, warm_train, spec, space)
            rng = np.random.default_rng(seed)
            wm = run_window(valid_eval, policy, arms, spec, space, histories, k,
                            rng=rng, consumed=consumed, exclude_seen=exclude_seen)
            report.append({"h": h, param_name: value, "valid_ndcg": wm.ndcg_mean})
            _logger.info("tune %s h=%d %s=%.3g -> ndcg@%d %.5f",
                         policy_kind, h, param_name, value, k, wm.ndcg_mean)
            if wm.ndcg_mean > best[0]:
                best = (wm.ndcg_mean, policy, spec)
    return best[1], best[2], report
