"""Disjoint per-arm linear bandits with rank-one incremental updates.

Every recommendable item gets its own ridge model (A = lambda*I + sum x x^T,
b = sum r*x); the cached inverse is maintained with the Sherman-Morrison
identity so an update costs O(dim^2).  The arm table keeps all per-arm
matrices in one stacked tensor, which turns whole-catalog scoring into a
single flat matrix-vector product -- the hot path of the replay loop.

Three exploration policies share the machinery: LinUCB adds a
confidence-width bonus alpha*sqrt(x^T A_inv x), LinTS samples
theta ~ N(theta_hat, v^2 A_inv) through Cholesky factors of A_inv, and
LinGreedy is greedy except that with probability epsilon a call returns a
uniformly shuffled slate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import NumericalError
from .state import StateSpec, build_state, empty_history, update_history

_logger = logging.getLogger(__name__)

LINUCB = "linucb"
LINGREEDY = "lingreedy"
LINTS = "lints"
POLICY_KINDS = (LINUCB, LINGREEDY, LINTS)

ARMS_MAGIC = b"SBARM001"


@dataclass(frozen=True)
class Policy:
    """Exploration strategy tag plus its parameters.

    Only the parameter matching ``kind`` is consulted, but all are range
    checked so a mistyped config fails loudly.
    """

    kind: str
    alpha: float = 0.5
    epsilon: float = 0.1
    v: float = 0.5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.v <= 0:
            raise ValueError(f"v must be > 0, got {self.v}")

    def param(self) -> float:
        """The parameter value this kind actually uses."""
        return {LINUCB: self.alpha, LINGREEDY: self.epsilon, LINTS: self.v}[self.kind]


class ArmModel:
    """Read/write handle to one arm's slice of an :class:`ArmTable`."""

    __slots__ = ("table", "index", "item")

    def __init__(self, table: "ArmTable", index: int):
        self.table = table
        self.index = index
        self.item = int(table.item_ids[index])

    @property
    def A(self) -> np.ndarray:
        return self.table._A[self.index]

    @property
    def b(self) -> np.ndarray:
        return self.table._b[self.index]

    @property
    def A_inv(self) -> np.ndarray:
        return self.table._A_inv[self.index]

    @property
    def n_updates(self) -> int:
        return int(self.table._n_updates[self.index])

    @property
    def dim(self) -> int:
        return self.table.dim


class ArmTable:
    """All arms of one run, stored as stacked (n, dim, dim) tensors."""

    def __init__(self, items: Iterable[int], dim: int, lambda_ridge: float):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if lambda_ridge <= 0:
            raise ValueError(f"lambda_ridge must be > 0, got {lambda_ridge}")
        self.dim = dim
        self.lambda_ridge = float(lambda_ridge)
        self.item_ids = np.array(sorted({int(i) for i in items}), dtype=np.int64)
        n = len(self.item_ids)
        self._pos = {int(it): p for p, it in enumerate(self.item_ids)}
        eye = np.eye(dim)
        self._A = np.tile(eye * lambda_ridge, (n, 1, 1))
        self._A_inv = np.tile(eye / lambda_ridge, (n, 1, 1))
        self._b = np.zeros((n, dim))
        self._theta = np.zeros((n, dim))
        self._n_updates = np.zeros(n, dtype=np.int64)
        # flat (n*dim, dim) view sharing memory with the stack: one GEMV
        # scores every arm at once
        self._A_inv_flat = self._A_inv.reshape(n * dim, dim)
        # upper Cholesky factors of A_inv for LinTS, built lazily
        self._U: np.ndarray | None = None
        self._U_flat: np.ndarray | None = None
        self._u_dirty: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item: int) -> bool:
        return int(item) in self._pos

    def arm(self, item: int) -> ArmModel:
        pos = self._pos.get(int(item))
        if pos is None:
            raise KeyError(f"no arm for item {item}")
        return ArmModel(self, pos)

    def arms(self) -> Iterable[ArmModel]:
        for p in range(len(self)):
            yield ArmModel(self, p)

    def total_updates(self) -> int:
        return int(self._n_updates.sum())

    # -- scoring primitives ------------------------------------------------

    def greedy_scores(self, x: np.ndarray) -> np.ndarray:
        return self._theta @ x

    def quad_forms(self, x: np.ndarray) -> np.ndarray:
        """x^T A_inv x for every arm via one flat matvec."""
        y = (self._A_inv_flat @ x).reshape(len(self), self.dim)
        return y @ x

    def _ensure_chol(self) -> None:
        if self._U is None:
            try:
                L = np.linalg.cholesky(self._A_inv)
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"cholesky of A_inv failed: {e}") from e
            self._U = np.ascontiguousarray(L.transpose(0, 2, 1))
            self._U_flat = self._U.reshape(len(self) * self.dim, self.dim)
            self._u_dirty = np.zeros(len(self), dtype=bool)
            return
        stale = np.flatnonzero(self._u_dirty)
        for i in stale:
            try:
                self._U[i] = np.linalg.cholesky(self._A_inv[i]).T
            except np.linalg.LinAlgError as e:
                raise NumericalError(
                    f"arm item={int(self.item_ids[i])}: cholesky of A_inv failed: {e}") from e
        if stale.size:
            self._u_dirty[stale] = False

    def ts_scores(self, x: np.ndarray, v: float, rng: np.random.Generator) -> np.ndarray:
        """theta~ . x for every arm, one Gaussian row drawn per arm."""
        self._ensure_chol()
        w = (self._U_flat @ x).reshape(len(self), self.dim)
        z = rng.standard_normal((len(self), self.dim))
        return self._theta @ x + v * (z * w).sum(axis=1)

    # -- mutation ------------------------------------------------------------

    def update_at(self, pos: int, x: np.ndarray, reward: float) -> None:
        A_inv = self._A_inv[pos]
        y = A_inv @ x
        denom = 1.0 + float(x @ y)
        if denom <= 0.0:
            raise NumericalError(
                f"arm item={int(self.item_ids[pos])}: update denominator {denom} <= 0")
        self._A[pos] += np.outer(x, x)
        self._b[pos] += reward * x
        A_inv -= np.outer(y, y) / denom
        self._n_updates[pos] += 1
        self._theta[pos] = A_inv @ self._b[pos]
        if self._u_dirty is not None:
            self._u_dirty[pos] = True


def init_arms(items: Iterable[int], dim: int, lambda_ridge: float) -> ArmTable:
    """Fresh table: every arm at A = lambda*I, b = 0, A_inv = I/lambda."""
    return ArmTable(items, dim, lambda_ridge)


def point_estimate(arm: ArmModel) -> np.ndarray:
    """Ridge solution theta = A_inv . b, computed from the cached inverse."""
    return arm.A_inv @ arm.b


def update(arm: ArmModel, x: np.ndarray, reward: float) -> None:
    """Fold one (context, reward) observation into an arm.

    A gains the outer product x x^T, b gains reward*x, and the cached
    inverse moves by the Sherman-Morrison correction
    (A + xx^T)^-1 = A^-1 - (A^-1 x)(A^-1 x)^T / (1 + x^T A^-1 x).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arm.dim,):
        raise ValueError(f"context has shape {x.shape}, arm is {arm.dim}-dimensional")
    arm.table.update_at(arm.index, x, float(reward))


def score(policy: Policy, arm: ArmModel, x: np.ndarray,
          rng: np.random.Generator | None = None) -> float:
    """Policy score of a single arm for context x.

    LinTS draws from ``rng`` (a fresh generator seeded with
    ``policy.rng_seed`` when none is passed, so repeated standalone calls
    repeat the same draw).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arm.dim,):
        raise ValueError(f"context has shape {x.shape}, arm is {arm.dim}-dimensional")
    theta = arm.table._theta[arm.index]
    if policy.kind == LINUCB:
        quad = float(x @ (arm.A_inv @ x))
        s = float(theta @ x) + policy.alpha * np.sqrt(max(quad, 0.0))
    elif policy.kind == LINGREEDY:
        s = float(theta @ x)
    else:
        if rng is None:
            rng = np.random.default_rng(policy.rng_seed)
        try:
            L = np.linalg.cholesky(arm.A_inv)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"arm item={arm.item}: cholesky of A_inv failed: {e}") from e
        theta_tilde = theta + policy.v * (L @ rng.standard_normal(arm.dim))
        s = float(theta_tilde @ x)
    if not np.isfinite(s):
        raise NumericalError(f"arm item={arm.item}: non-finite score {s}")
    return s


def _eligible_mask(table: ArmTable, exclude: Iterable[int]) -> np.ndarray:
    mask = np.ones(len(table), dtype=bool)
    for item in exclude:
        pos = table._pos.get(int(item))
        if pos is not None:
            mask[pos] = False
    return mask


def _policy_scores(policy: Policy, table: ArmTable, x: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Whole-table scores for the non-explore branches."""
    if policy.kind == LINUCB:
        scores = table.greedy_scores(x)
        if policy.alpha != 0.0:
            scores = scores + policy.alpha * np.sqrt(np.maximum(table.quad_forms(x), 0.0))
        return scores
    if policy.kind == LINTS:
        return table.ts_scores(x, policy.v, rng)
    return table.greedy_scores(x)


def _check_finite(table: ArmTable, scores: np.ndarray, mask: np.ndarray) -> None:
    bad = ~np.isfinite(scores) & mask
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"arm item={int(table.item_ids[first])}: non-finite score {scores[first]}")


def rank_topk(policy: Policy, arms: ArmTable, x: np.ndarray, k: int,
              exclude: Iterable[int] = (), rng: np.random.Generator | None = None) -> list[int]:
    """Ranked slate of up to k eligible items.

    LinUCB/LinTS (and the greedy branch of LinGreedy) sort by score
    descending with ascending-item-index tie-break.  LinGreedy first makes
    one uniform draw; with probability epsilon the slate is a uniform
    random permutation of the eligible items instead.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(arms) == 0:
        return []
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    x = np.asarray(x, dtype=np.float64)
    mask = _eligible_mask(arms, exclude)
    idx = np.flatnonzero(mask)
    if policy.kind == LINGREEDY and rng.random() < policy.epsilon:
        perm = rng.permutation(idx.size)
        return [int(arms.item_ids[idx[p]]) for p in perm[:k]]
    scores = _policy_scores(policy, arms, x, rng)
    if idx.size == 0:
        return []
    _check_finite(arms, scores, mask)
    sub = scores[idx]
    order = np.lexsort((idx, -sub))
    return [int(arms.item_ids[i]) for i in idx[order[:k]]]


def rank_of_item(policy: Policy, arms: ArmTable, x: np.ndarray, k: int, item: int,
                 exclude: Iterable[int] = (), rng: np.random.Generator | None = None) -> int | None:
    """1-based rank `item` would take in rank_topk's slate, or None past k.

    Consumes the generator exactly like :func:`rank_topk` (same draws in
    the same order), so replay loops can use it as a drop-in fast path
    without perturbing downstream randomness.  Items that are excluded or
    have no arm yield None.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(arms) == 0:
        return None
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    x = np.asarray(x, dtype=np.float64)
    mask = _eligible_mask(arms, exclude)
    pos = arms._pos.get(int(item))
    if policy.kind == LINGREEDY and rng.random() < policy.epsilon:
        idx = np.flatnonzero(mask)
        perm = rng.permutation(idx.size)
        if pos is None or not mask[pos]:
            return None
        where = int(np.flatnonzero(idx[perm] == pos)[0])
        return where + 1 if where < k else None
    scores = _policy_scores(policy, arms, x, rng)
    if pos is None or not mask[pos]:
        return None
    _check_finite(arms, scores, mask)
    s_t = scores[pos]
    if not np.isfinite(s_t):
        raise NumericalError(f"arm item={int(item)}: non-finite score {s_t}")
    greater = int(np.count_nonzero(mask & (scores > s_t)))
    ties_before = int(np.count_nonzero(mask[:pos] & (scores[:pos] == s_t)))
    rank = greater + ties_before + 1
    return rank if rank <= k else None


def warm_start(policy: Policy, arms: ArmTable, warm, spec: StateSpec, space,
               histories: dict | None = None, consumed: dict | None = None
               ) -> tuple[dict, dict]:
    """Replay warm events: prime arm statistics and user histories.

    For each event in order, the context is built from the user's history
    *before* the event, the consumed item's arm is updated with reward
    1.0, and the history advances.  Events whose item has no arm still
    advance the history (and the consumed set) but skip the update.
    Returns the (histories, consumed-item-sets) tables, updating them in
    place when passed in.
    """
    histories = {} if histories is None else histories
    consumed = {} if consumed is None else consumed
    for e in range(len(warm)):
        u = int(warm.users[e])
        it = int(warm.items[e])
        hist = histories.get(u)
        if hist is None:
            hist = histories[u] = empty_history(spec)
        x = build_state(spec, space, u, hist)
        pos = arms._pos.get(it)
        if pos is not None:
            arms.update_at(pos, x, 1.0)
        update_history(hist, it, space)
        consumed.setdefault(u, set()).add(it)
    return histories, consumed


def save_arms(table: ArmTable, path: str | Path, policy: Policy | None = None) -> None:
    """Snapshot: JSON header, then per arm the lower triangle of A, b,
    and n_updates (little-endian 64-bit)."""
    pol = None
    if policy is not None:
        pol = {"kind": policy.kind, "alpha": policy.alpha, "epsilon": policy.epsilon,
               "v": policy.v, "rng_seed": policy.rng_seed}
    header = json.dumps({
        "dim": table.dim, "lambda": table.lambda_ridge, "policy": pol,
        "count": len(table), "items": [int(i) for i in table.item_ids],
    }).encode()
    tri = np.tril_indices(table.dim)
    with open(path, "wb") as fh:
        fh.write(ARMS_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for p in range(len(table)):
            fh.write(np.ascontiguousarray(table._A[p][tri], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(table._b[p], dtype="<f8").tobytes())
            fh.write(np.int64(table._n_updates[p]).tobytes())


def load_arms(path: str | Path) -> tuple[ArmTable, Policy | None]:
    with open(path, "rb") as fh:
        if fh.read(len(ARMS_MAGIC)) != ARMS_MAGIC:
            raise ValueError(f"{path}: not an arm-table snapshot")
        hlen = int.from_bytes(fh.read(4), "little")
        meta = json.loads(fh.read(hlen))
        dim, items = meta["dim"], meta["items"]
        table = ArmTable(items, dim, meta["lambda"])
        tri = np.tril_indices(dim)
        ntri = len(tri[0])
        for p in range(meta["count"]):
            vals = np.frombuffer(fh.read(8 * ntri), dtype="<f8")
            A = np.zeros((dim, dim))
            A[tri] = vals
            A.T[tri] = vals
            table._A[p] = A
            table._b[p] = np.frombuffer(fh.read(8 * dim), dtype="<f8")
            table._n_updates[p] = np.frombuffer(fh.read(8), dtype="<i8")[0]
    table._A_inv[:] = np.linalg.inv(table._A)
    table._theta[:] = np.einsum("nij,nj->ni", table._A_inv, table._b)
    pol = meta.get("policy")
    policy = Policy(pol["kind"], pol["alpha"], pol["epsilon"], pol["v"], pol["rng_seed"]) if pol else None
    return table, policy
