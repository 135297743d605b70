"""Static matrix-factorization embeddings: implicit ALS and BPR.

Both trainers produce an :class:`EmbeddingSpace` over the log's full id
catalog.  Rows for users that never occur in the training events are
zeroed (their context falls back to the exploration term downstream);
ALS also zeroes never-observed item rows, which is exactly the ridge
solution for an all-zero preference row.  BPR item rows touched only by
negative sampling keep their trained values.

Initialization is i.i.d. uniform on [-0.5/d, 0.5/d], drawing P first and
then Q from a single generator seeded with ``seed``.  Each ALS sweep
solves all user rows against the fixed item factor, then all item rows
against the fixed user factor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import ConfigError, NumericalError
from .ingest import InteractionLog

_logger = logging.getLogger(__name__)

ALS = "als"
BPR = "bpr"
SPACE_MAGIC = b"SBEMB001"


@dataclass
class EmbeddingSpace:
    """Trained user/item factors plus the configuration that produced them."""

    P: np.ndarray
    Q: np.ndarray
    d: int
    model: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.P.shape[1] != self.d or self.Q.shape[1] != self.d:
            raise ValueError("factor width disagrees with d")

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class MfGrid:
    """Hyperparameter search lists; ``lr_values`` only applies to BPR."""

    d_values: tuple[int, ...]
    lr_values: tuple[float, ...]
    reg_values: tuple[float, ...]
    epoch_values: tuple[int, ...]

    def __post_init__(self) -> None:
        for name in ("d_values", "reg_values", "epoch_values"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")

    @classmethod
    def defaults(cls, model: str) -> "MfGrid":
        if model == ALS:
            return cls((4, 8, 16, 32), (), (1e-3, 1e-2, 1e-1), (5, 15, 30))
        if model == BPR:
            return cls((4, 8, 16, 32), (1e-3, 1e-2, 1e-1), (1e-3, 1e-2, 1e-1), (50, 100, 150))
        raise ValueError(f"unknown model {model!r}")

    def configs(self, model: str) -> list[dict]:
        """Expand to per-configuration dicts in deterministic nesting order."""
        out = []
        if model == ALS:
            for d in self.d_values:
                for reg in self.reg_values:
                    for epochs in self.epoch_values:
                        out.append({"d": d, "reg": reg, "epochs": epochs})
        elif model == BPR:
            if not self.lr_values:
                raise ValueError("lr_values must be non-empty for bpr")
            for d in self.d_values:
                for lr in self.lr_values:
                    for reg in self.reg_values:
                        for epochs in self.epoch_values:
                            out.append({"d": d, "lr": lr, "reg": reg, "epochs": epochs})
        else:
            raise ValueError(f"unknown model {model!r}")
        return out


def _init_factors(n_users: int, n_items: int, d: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    half = 0.5 / d
    P = rng.uniform(-half, half, size=(n_users, d))
    Q = rng.uniform(-half, half, size=(n_items, d))
    return P, Q


def _aggregate_pairs(log: InteractionLog) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse repeat (user, item) events, summing feedback."""
    pairs = np.stack([log.users.astype(np.int64), log.items.astype(np.int64)], axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    fsum = np.bincount(inverse, weights=log.feedback, minlength=len(uniq))
    return uniq[:, 0], uniq[:, 1], fsum


def _csr(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n_rows: int):
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), vals


def _solve_side(X: np.ndarray, Y: np.ndarray, indptr: np.ndarray,
                idx: np.ndarray, conf: np.ndarray, reg: float, sweep: int) -> None:
    """One ALS half-step: overwrite X with the exact per-row ridge solves.

    Row r minimizes sum_c c_rc (p_rc - x_r . y_c)^2 + reg ||x_r||^2 where
    unobserved cells carry confidence 1 and preference 0; rows with no
    observations therefore solve to zero.
    """
    d = Y.shape[1]
    YtY = Y.T @ Y + reg * np.eye(d)
    for r in range(X.shape[0]):
        lo, hi = indptr[r], indptr[r + 1]
        if lo == hi:
            X[r] = 0.0
            continue
        cols = idx[lo:hi]
        c = conf[lo:hi]
        M = Y[cols]
        A = YtY + (M.T * (c - 1.0)) @ M
        rhs = M.T @ c
        try:
            X[r] = cho_solve(cho_factor(A, lower=True, check_finite=False),
                             rhs, check_finite=False)
        except LinAlgError as e:
            raise NumericalError(f"sweep {sweep}: row solve failed ({e})") from e


def train_als(log: InteractionLog, d: int, reg: float, epochs: int,
              conf_weight: float = 40.0, seed: int = 0) -> EmbeddingSpace:
    """Confidence-weighted alternating least squares on implicit feedback.

    Preferences are binarized (any observed pair counts 1, everything
    else 0) and observed cells weigh in with confidence
    ``1 + conf_weight * feedback``, repeat events summing their feedback.
    Runs ``epochs`` full alternating sweeps, user rows first.
    """
    if len(log) == 0:
        raise ValueError("cannot train on an empty log")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if reg <= 0:
        raise ValueError(f"reg must be > 0, got {reg}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")

    users, items, fsum = _aggregate_pairs(log)
    conf = 1.0 + conf_weight * fsum
    u_indptr, u_items, u_conf = _csr(users, items, conf, log.n_users)
    i_indptr, i_users, i_conf = _csr(items, users, conf, log.n_items)

    P, Q = _init_factors(log.n_users, log.n_items, d, seed)
    for sweep in range(1, epochs + 1):
        _solve_side(P, Q, u_indptr, u_items, u_conf, reg, sweep)
        _solve_side(Q, P, i_indptr, i_users, i_conf, reg, sweep)
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise NumericalError(f"sweep {sweep}: non-finite factors")

    params = {"d": d, "reg": reg, "epochs": epochs, "conf_weight": conf_weight}
    return EmbeddingSpace(P, Q, d, ALS, params, seed)


def als_objective(log: InteractionLog, P: np.ndarray, Q: np.ndarray,
                  reg: float, conf_weight: float) -> float:
    """Exact dense weighted objective train_als minimizes (toy sizes only)."""
    C = np.ones((log.n_users, log.n_items))
    pref = np.zeros_like(C)
    users, items, fsum = _aggregate_pairs(log)
    C[users, items] = 1.0 + conf_weight * fsum
    pref[users, items] = 1.0
    err = pref - P @ Q.T
    return float((C * err * err).sum() + reg * ((P * P).sum() + (Q * Q).sum()))


def bpr_triplet_objective(p_u: np.ndarray, q_i: np.ndarray, q_j: np.ndarray, reg: float) -> float:
    """Per-triplet criterion: ln sigmoid(p_u . (q_i - q_j)) minus the L2 term."""
    x = float(p_u @ (q_i - q_j))
    # log(sigmoid(x)) computed stably on both tails
    lsig = -np.log1p(np.exp(-x)) if x >= 0 else x - np.log1p(np.exp(x))
    pen = 0.5 * reg * (p_u @ p_u + q_i @ q_i + q_j @ q_j)
    return float(lsig - pen)


def bpr_triplet_gradients(p_u: np.ndarray, q_i: np.ndarray, q_j: np.ndarray,
                          reg: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ascent gradients of :func:`bpr_triplet_objective` per parameter block."""
    x = float(p_u @ (q_i - q_j))
    if x >= 0:
        g = 1.0 / (1.0 + np.exp(x))
    else:
        e = np.exp(x)
        g = 1.0 - e / (1.0 + e)
    return (
        g * (q_i - q_j) - reg * p_u,
        g * p_u - reg * q_i,
        -g * p_u - reg * q_j,
    )


@njit(cache=True)
def _bpr_kernel(P, Q, ev_users, ev_items, indptr, consumed, lr, reg,
                triplets_per_epoch, epochs, seed):  # pragma: no cover - jitted
    np.random.seed(seed)
    n_events = ev_users.shape[0]
    n_items = Q.shape[0]
    d = P.shape[1]
    for _ep in range(epochs):
        for _t in range(triplets_per_epoch):
            e = np.random.randint(0, n_events)
            u = ev_users[e]
            i = ev_items[e]
            seg = consumed[indptr[u]:indptr[u + 1]]
            # uniform negative: rejection-sample, then linear fallback scan
            j = -1
            for _try in range(100):
                cand = np.random.randint(0, n_items)
                pos = np.searchsorted(seg, cand)
                if pos >= seg.shape[0] or seg[pos] != cand:
                    j = cand
                    break
            if j < 0:
                start = np.random.randint(0, n_items)
                for off in range(n_items):
                    cand = (start + off) % n_items
                    pos = np.searchsorted(seg, cand)
                    if pos >= seg.shape[0] or seg[pos] != cand:
                        j = cand
                        break
            x = 0.0
            for f in range(d):
                x += P[u, f] * (Q[i, f] - Q[j, f])
            if x >= 0.0:
                g = 1.0 / (1.0 + np.exp(x))
            else:
                ex = np.exp(x)
                g = 1.0 - ex / (1.0 + ex)
            for f in range(d):
                pu = P[u, f]
                qi = Q[i, f]
                qj = Q[j, f]
                P[u, f] = pu + lr * (g * (qi - qj) - reg * pu)
                Q[i, f] = qi + lr * (g * pu - reg * qi)
                Q[j, f] = qj + lr * (-g * pu - reg * qj)


def train_bpr(log: InteractionLog, d: int, lr: float, reg: float,
              epochs: int, seed: int = 0) -> EmbeddingSpace:
    """Bayesian personalized ranking by stochastic gradient ascent.

    Each epoch draws ``len(log)`` (user, positive, negative) triplets:
    the positive comes from a uniformly sampled event, the negative
    uniformly from the items that user never consumed (rejection
    sampling capped at 100 tries, then a wrap-around scan).  Updates are
    sequential, so a fixed seed fixes the result.
    """
    if lr <= 0:
        raise ConfigError(f"lr must be > 0, got {lr}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if len(log) == 0:
        raise ValueError("cannot train on an empty log")
    if log.n_items < 2:
        raise ConfigError("bpr needs a catalog of at least 2 items")

    users, items, _ = _aggregate_pairs(log)
    per_user = np.bincount(users, minlength=log.n_users)
    if per_user.max(initial=0) >= log.n_items:
        worst = int(per_user.argmax())
        raise ConfigError(f"user {worst} has consumed every item; no negatives exist")
    indptr, consumed, _ = _csr(users, items, np.ones_like(users, dtype=np.float64), log.n_users)

    P, Q = _init_factors(log.n_users, log.n_items, d, seed)
    _bpr_kernel(P, Q, log.users.astype(np.int64), log.items.astype(np.int64),
                indptr, consumed, float(lr), float(reg), len(log), int(epochs),
                int(seed) % (2 ** 32))
    if not (np.isfinite(P).all() and np.isfinite(Q).all()):
        raise NumericalError("bpr training diverged to non-finite factors")

    seen_users = np.zeros(log.n_users, dtype=bool)
    seen_users[log.users] = True
    P[~seen_users] = 0.0

    params = {"d": d, "lr": lr, "reg": reg, "epochs": epochs}
    return EmbeddingSpace(P, Q, d, BPR, params, seed)


def score_topk(space: EmbeddingSpace, user: int, k: int, exclude: set[int] | None = None) -> list[int]:
    """Top-k catalog items by p_u . q_i, ties broken by ascending index."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if not 0 <= user < space.n_users:
        raise ValueError(f"user {user} has no row in P")
    scores = space.Q @ space.P[user]
    eligible = np.ones(space.n_items, dtype=bool)
    if exclude:
        eligible[np.fromiter(exclude, dtype=np.int64)] = False
    idx = np.flatnonzero(eligible)
    if idx.size == 0:
        return []
    order = np.lexsort((idx, -scores[idx]))
    return [int(i) for i in idx[order[:k]]]


def _winner_retrain_log(warm_train: InteractionLog, warm_valid: InteractionLog) -> InteractionLog:
    if warm_train.user_ids != warm_valid.user_ids or warm_train.item_ids != warm_valid.item_ids:
        raise ValueError("warm slices must share one id catalog")
    return InteractionLog(
        np.concatenate([warm_train.users, warm_valid.users]),
        np.concatenate([warm_train.items, warm_valid.items]),
        np.concatenate([warm_train.feedback, warm_valid.feedback]),
        np.concatenate([warm_train.timestamps, warm_valid.timestamps]),
        warm_train.user_ids, warm_train.item_ids,
    )


def _train_config(model: str, log: InteractionLog, cfg: dict, conf_weight: float, seed: int) -> EmbeddingSpace:
    if model == ALS:
        return train_als(log, cfg["d"], cfg["reg"], cfg["epochs"], conf_weight, seed)
    return train_bpr(log, cfg["d"], cfg["lr"], cfg["reg"], cfg["epochs"], seed)


def validation_ndcg(space: EmbeddingSpace, warm_train: InteractionLog,
                    warm_valid: InteractionLog, k: int = 20) -> float:
    """Mean NDCG@k of dot-product rankings against held-out events.

    Each user's warm_train items are excluded from their candidate set; a
    held-out event whose item is excluded (or ranked below k) scores 0.
    """
    if len(warm_valid) == 0:
        return 0.0
    tr_users, tr_items, _ = _aggregate_pairs(warm_train)
    order = np.argsort(tr_users, kind="stable")
    bounds = np.searchsorted(tr_users[order], np.arange(space.n_users + 1))
    total = 0.0
    by_user: dict[int, list[int]] = {}
    for e in range(len(warm_valid)):
        by_user.setdefault(int(warm_valid.users[e]), []).append(int(warm_valid.items[e]))
    for u, truths in by_user.items():
        scores = space.Q @ space.P[u]
        banned = tr_items[order[bounds[u]:bounds[u + 1]]]
        elig = np.ones(space.n_items, dtype=bool)
        elig[banned] = False
        for i in truths:
            if not elig[i]:
                continue
            s_t = scores[i]
            better = int(np.count_nonzero(elig & (scores > s_t)))
            peers = int(np.count_nonzero(elig[:i] & (scores[:i] == s_t)))
            rank = better + peers + 1
            if rank <= k:
                total += 1.0 / np.log2(rank + 1)
    return total / len(warm_valid)


def grid_search_embeddings(model: str, grid: MfGrid, warm_train: InteractionLog,
                           warm_valid: InteractionLog, *, conf_weight: float = 40.0,
                           seed: int = 0, k: int = 20) -> tuple[EmbeddingSpace, list[dict]]:
    """Exhaustive grid search selected on held-out NDCG@k.

    Every configuration trains on ``warm_train`` and is scored against
    ``warm_valid``; the best (ties -> earliest in grid order) is retrained
    on the union of both slices and returned together with the full
    per-configuration report.
    """
    configs = grid.configs(model)
    report = []
    best = -1.0
    best_cfg = None
    for cfg in configs:
        try:
            space = _train_config(model, warm_train, cfg, conf_weight, seed)
        except Exception as e:
            raise type(e)(f"config {cfg}: {e}") from e
        score = validation_ndcg(space, warm_train, warm_valid, k)
        report.append({**cfg, "model": model, "valid_ndcg": score})
        _logger.info("grid %s %s -> ndcg@%d %.5f", model, cfg, k, score)
        if score > best:
            best = score
            best_cfg = cfg
    full = _winner_retrain_log(warm_train, warm_valid)
    winner = _train_config(model, full, best_cfg, conf_weight, seed)
    return winner, report


def save_space(space: EmbeddingSpace, path: str | Path) -> None:
    """Snapshot: JSON header, then row-major P and Q as little-endian f8."""
    header = json.dumps({
        "model": space.model, "d": space.d,
        "n_users": space.n_users, "n_items": space.n_items,
        "params": space.params, "seed": space.seed,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(SPACE_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(np.ascontiguousarray(space.P, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(space.Q, dtype="<f8").tobytes())


def load_space(path: str | Path) -> EmbeddingSpace:
    with open(path, "rb") as fh:
        if fh.read(len(SPACE_MAGIC)) != SPACE_MAGIC:
            raise ValueError(f"{path}: not an embedding snapshot")
        hlen = int.from_bytes(fh.read(4), "little")
        meta = json.loads(fh.read(hlen))
        nu, ni, d = meta["n_users"], meta["n_items"], meta["d"]
        P = np.frombuffer(fh.read(8 * nu * d), dtype="<f8").reshape(nu, d).copy()
        Q = np.frombuffer(fh.read(8 * ni * d), dtype="<f8").reshape(ni, d).copy()
    return EmbeddingSpace(P, Q, d, meta["model"], meta["params"], meta["seed"])
