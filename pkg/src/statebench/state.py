"""User-state construction on top of a trained embedding space.

Three interchangeable representations of "who is this user right now":

* ``user``      -- the user's own trained embedding row (static).
* ``item_mean`` -- running mean of the embeddings of every item the user
  has consumed so far.
* ``item_concat`` -- the h most recent consumed item embeddings,
  newest first, zero-padded on the right until h slots are filled.

The last two evolve as histories advance, which is the whole point of
comparing them against the frozen per-user row.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

USER = "user"
ITEM_MEAN = "item_mean"
ITEM_CONCAT = "item_concat"
STATE_KINDS = (USER, ITEM_MEAN, ITEM_CONCAT)


@dataclass(frozen=True)
class StateSpec:
    """Which representation to build and how wide it is.

    ``h`` only matters for ``item_concat``; it is carried (and validated)
    regardless so specs stay comparable.
    """

    kind: str
    d: int
    h: int = 5

    def __post_init__(self) -> None:
        if self.kind not in STATE_KINDS:
            raise ValueError(f"unknown state kind {self.kind!r}; expected one of {STATE_KINDS}")
        if self.d < 1:
            raise ValueError(f"embedding dim must be >= 1, got {self.d}")
        if self.h < 1:
            raise ValueError(f"history depth must be >= 1, got {self.h}")

    def dim(self) -> int:
        """Context-vector width this spec produces."""
        return self.d * self.h if self.kind == ITEM_CONCAT else self.d


@dataclass
class UserHistory:
    """Consumption summary for one user, sufficient for every state kind.

    ``recent`` keeps item ids newest-first and is bounded at ``StateSpec.h``;
    ``running_sum``/``count`` track the full (unbounded) consumed set with
    multiplicity, so repeat consumptions shift the mean again.
    """

    running_sum: np.ndarray
    count: int = 0
    recent: deque = field(default_factory=deque)


def empty_history(spec: StateSpec) -> UserHistory:
    return UserHistory(np.zeros(spec.d), 0, deque(maxlen=spec.h))


def build_state(spec: StateSpec, space, user: int, hist: UserHistory | None) -> np.ndarray:
    """Materialize the context vector for one user at this moment.

    Returns a fresh array of length ``spec.dim()``; callers may mutate it
    freely.  ``hist`` may be None (treated as empty) except for kind
    ``user`` where it is ignored entirely.  A user with no history gets
    the zero vector under ``item_mean``/``item_concat``; a user index
    outside the embedding catalog gets the zero vector under ``user``
    (unseen users have no trained row).
    """
    if spec.d != space.d:
        raise ConfigError(f"state spec is {spec.d}-dimensional but embeddings are {space.d}")
    if spec.kind == USER:
        if 0 <= user < space.P.shape[0]:
            return space.P[user].astype(np.float64, copy=True)
        return np.zeros(spec.d)
    if spec.kind == ITEM_MEAN:
        if hist is None or hist.count == 0:
            return np.zeros(spec.d)
        return hist.running_sum / hist.count
    # item_concat
    out = np.zeros(spec.d * spec.h)
    if hist is not None:
        for pos, item in enumerate(hist.recent):
            out[pos * spec.d:(pos + 1) * spec.d] = space.Q[item]
    return out


def update_history(hist: UserHistory, item: int, space) -> UserHistory:
    """Advance a history by one consumed item (in place).

    Adds the item's embedding to the running sum, bumps the count, and
    pushes the id onto the front of ``recent`` (the deque's maxlen evicts
    the oldest).  Items outside the embedding catalog raise ``KeyError``.
    """
    if not 0 <= item < space.Q.shape[0]:
        raise KeyError(f"item {item} outside embedding catalog of {space.Q.shape[0]}")
    hist.running_sum += space.Q[item]
    hist.count += 1
    hist.recent.appendleft(item)
    return hist


def seed_histories(log, spec: StateSpec, space) -> dict[int, UserHistory]:
    """Replay a warm log in event order, building one history per user."""
    histories: dict[int, UserHistory] = {}
    for i in range(len(log)):
        u = int(log.users[i])
        hist = histories.get(u)
        if hist is None:
            hist = histories[u] = empty_history(spec)
        update_history(hist, int(log.items[i]), space)
    return histories
