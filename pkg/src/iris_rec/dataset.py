"""Implicit-feedback interactions, leave-one-out splitting and sampling.

All ids are re-indexed to dense 0-based integers at load time, in order of
first appearance. The raw tokens are kept so results can be reported in the
caller's vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "InteractionDataset",
    "SplitBundle",
    "TrainInstance",
    "Instances",
    "Triples",
    "EvalCase",
    "NUM_EVAL_NEGATIVES",
    "load_interactions",
    "parse_interactions",
    "leave_one_out_split",
    "sample_train_negatives",
    "sample_train_triples",
    "build_eval_candidates",
    "user_history",
]

NUM_EVAL_NEGATIVES = 99


class DatasetError(ValueError):
    """Raised for malformed input files and violated sampling preconditions."""


def _frozen(arr) -> np.ndarray:
    out = np.asarray(arr, dtype=np.int64).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class InteractionDataset:
    """Binary user-item matrix stored as per-user positive item lists."""

    num_users: int
    num_items: int
    positives: tuple[np.ndarray, ...]
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.positives) != self.num_users:
            raise DatasetError("positives must hold one entry per user")
        for u, items in enumerate(self.positives):
            if items.size and (items.min() < 0 or items.max() >= self.num_items):
                raise DatasetError(f"user {u}: item id out of range")
            if np.unique(items).size != items.size:
                raise DatasetError(f"user {u}: duplicate (user, item) pair")

    @classmethod
    def from_lists(cls, positives: Sequence[Sequence[int]], num_items: int | None = None,
                   user_ids=None, item_ids=None) -> "InteractionDataset":
        pos = tuple(_frozen(p) for p in positives)
        if num_items is None:
            num_items = 1 + max((int(p.max()) for p in pos if p.size), default=-1)
        return cls(
            num_users=len(pos),
            num_items=int(num_items),
            positives=pos,
            user_ids=tuple(user_ids) if user_ids is not None else tuple(str(u) for u in range(len(pos))),
            item_ids=tuple(item_ids) if item_ids is not None else tuple(str(i) for i in range(num_items)),
        )

    @property
    def num_interactions(self) -> int:
        return int(sum(p.size for p in self.positives))

    def user_index(self, raw: str) -> int:
        try:
            return self.user_ids.index(raw)
        except ValueError:
            raise KeyError(f"unknown user {raw!r}") from None

    def item_index(self, raw: str) -> int:
        try:
            return self.item_ids.index(raw)
        except ValueError:
            raise KeyError(f"unknown item {raw!r}") from None

    def item_lookup(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.item_ids)}


@dataclass(frozen=True)
class SplitBundle:
    """Leave-one-out split: train positives plus one validation and one test item per user.

    ``full`` keeps the unsplit data so negative sampling can exclude every
    known positive, held-out ones included.
    """

    train: InteractionDataset
    validation_items: np.ndarray
    test_items: np.ndarray
    full: InteractionDataset

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def holdout(self, which: str) -> np.ndarray:
        if which == "validation":
            return self.validation_items
        if which == "test":
            return self.test_items
        raise ValueError(f"unknown holdout {which!r}; expected 'validation' or 'test'")


class TrainInstance(NamedTuple):
    user: int
    item: int
    label: int


@dataclass(frozen=True)
class Instances:
    """Pointwise training instances as parallel arrays."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)

    def __iter__(self) -> Iterator[TrainInstance]:
        for u, i, y in zip(self.users.tolist(), self.items.tolist(), self.labels.tolist()):
            yield TrainInstance(u, i, y)

    def __getitem__(self, idx) -> "Instances":
        return Instances(self.users[idx], self.items[idx], self.labels[idx])


@dataclass(frozen=True)
class Triples:
    """Pairwise (user, positive, negative) samples for the BPR loss."""

    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)

    def __getitem__(self, idx) -> "Triples":
        return Triples(self.users[idx], self.positives[idx], self.negatives[idx])


@dataclass(frozen=True)
class EvalCase:
    user: int
    positive: int
    negatives: np.ndarray

    @property
    def candidates(self) -> np.ndarray:
        return np.concatenate(([self.positive], self.negatives))


def parse_interactions(lines, source: str = "<input>") -> list[tuple[str, str]]:
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3) or not all(f.strip() and not any(c.isspace() for c in f.strip()) for f in fields[:2]):
            raise DatasetError(f"{source}:{lineno}: expected 'user<TAB>item[<TAB>timestamp]', got {line!r}")
        records.append((fields[0].strip(), fields[1].strip()))
    return records


def load_interactions(path, min_user_interactions: int = 1) -> InteractionDataset:
    """Read a tab-separated interaction file and drop sparse users.

    Users with fewer than ``min_user_interactions`` distinct items are removed
    before indexing, so user and item indices are contiguous over what
    remains. Repeated (user, item) records collapse to one positive.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        records = parse_interactions(fh, source=str(path))

    per_user: dict[str, dict[str, None]] = {}
    for user, item in records:
        per_user.setdefault(user, {})[item] = None
    kept = {u: items for u, items in per_user.items() if len(items) >= min_user_interactions}
    if not kept:
        raise DatasetError(f"{path}: no users left after filtering (min_user_interactions={min_user_interactions})")

    user_ids: list[str] = []
    item_index: dict[str, int] = {}
    positives = []
    for user, item in records:
        if user not in kept:
            continue
        if item not in item_index:
            item_index[item] = len(item_index)
    for user in kept:
        user_ids.append(user)
        positives.append([item_index[i] for i in kept[user]])
    return InteractionDataset.from_lists(positives, num_items=len(item_index),
                                         user_ids=user_ids, item_ids=list(item_index))


def leave_one_out_split(data: InteractionDataset, seed: int) -> SplitBundle:
    """Hold out one random test and one random validation item per user."""
    rng = np.random.default_rng(seed)
    train, val, test = [], np.empty(data.num_users, np.int64), np.empty(data.num_users, np.int64)
    for u, items in enumerate(data.positives):
        if items.size < 3:
            raise DatasetError(f"user {data.user_ids[u]!r} has {items.size} positives; leave-one-out needs at least 3")
        t, v = rng.choice(items.size, size=2, replace=False)
        test[u], val[u] = items[t], items[v]
        keep = np.ones(items.size, bool)
        keep[[t, v]] = False
        train.append(items[keep])
    return SplitBundle(
        train=InteractionDataset.from_lists(train, data.num_items, data.user_ids, data.item_ids),
        validation_items=_frozen(val),
        test_items=_frozen(test),
        full=data,
    )


def _negative_pool(num_items: int, positives: np.ndarray) -> np.ndarray:
    mask = np.ones(num_items, bool)
    mask[positives] = False
    return np.flatnonzero(mask)


def _draw_distinct(rng: np.random.Generator, pool_size: int, rows: int, k: int) -> np.ndarray:
    # Rejection within each row; rows with collisions are redrawn until distinct.
    draws = rng.integers(pool_size, size=(rows, k))
    if k == 1:
        return draws
    while True:
        srt = np.sort(draws, axis=1)
        bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
        if bad.size == 0:
            return draws
        draws[bad] = rng.integers(pool_size, size=(bad.size, k))


def _per_user_negatives(split: SplitBundle, K: int, rng: np.random.Generator):
    if K < 1:
        raise DatasetError(f"K must be >= 1, got {K}")
    users, pos, neg = [], [], []
    for u, items in enumerate(split.train.positives):
        if items.size == 0:
            continue
        pool = _negative_pool(split.num_items, split.full.positives[u])
        if pool.size < K:
            raise DatasetError(f"user {split.full.user_ids[u]!r}: only {pool.size} non-interacted items, cannot draw K={K}")
        # Very large K relative to the pool makes rejection slow; fall back to permutations.
        if K * 4 > pool.size:
            draws = np.stack([rng.permutation(pool.size)[:K] for _ in range(items.size)])
        else:
            draws = _draw_distinct(rng, pool.size, items.size, K)
        users.append(np.full(items.size, u, np.int64))
        pos.append(items)
        neg.append(pool[draws])
    if not users:
        empty = np.empty(0, np.int64)
        return empty, empty, np.empty((0, K), np.int64)
    return np.concatenate(users), np.concatenate(pos), np.concatenate(neg)


def sample_train_negatives(split: SplitBundle, K: int, seed: int, epoch: int = 0) -> Instances:
    """Pair every train positive with K uniform negatives, shuffled.

    The draw is a pure function of ``(seed, epoch)``.
    """
    rng = np.random.default_rng([seed, epoch])
    users, pos, neg = _per_user_negatives(split, K, rng)
    n = users.size
    all_users = np.concatenate((users, np.repeat(users, K)))
    all_items = np.concatenate((pos, neg.reshape(-1)))
    labels = np.concatenate((np.ones(n, np.int64), np.zeros(n * K, np.int64)))
    order = rng.permutation(all_users.size)
    return Instances(all_users[order], all_items[order], labels[order])


def sample_train_triples(split: SplitBundle, K: int, seed: int, epoch: int = 0) -> Triples:
    """Same negative draw as the pointwise sampler, arranged as (u, i, x) triples."""
    rng = np.random.default_rng([seed, epoch])
    users, pos, neg = _per_user_negatives(split, K, rng)
    t_users = np.repeat(users, K)
    t_pos = np.repeat(pos, K)
    t_neg = neg.reshape(-1)
    order = rng.permutation(t_users.size)
    return Triples(t_users[order], t_pos[order], t_neg[order])


def build_eval_candidates(split: SplitBundle, which: str, seed: int) -> list[EvalCase]:
    """One held-out positive plus 99 distinct sampled negatives per user."""
    holdout = split.holdout(which)
    rng = np.random.default_rng([seed, 0 if which == "validation" else 1])
    cases = []
    for u in range(split.num_users):
        pool = _negative_pool(split.num_items, split.full.positives[u])
        if pool.size < NUM_EVAL_NEGATIVES:
            raise DatasetError(
                f"user {split.full.user_ids[u]!r}: negative pool of {pool.size} items is smaller than {NUM_EVAL_NEGATIVES}")
        negs = rng.choice(pool, size=NUM_EVAL_NEGATIVES, replace=False)
        negs.setflags(write=False)
        cases.append(EvalCase(u, int(holdout[u]), negs))
    return cases


def user_history(split: SplitBundle, user: int, exclude: int | None = None) -> list[int]:
    if not 0 <= user < split.num_users:
        raise KeyError(f"unknown user index {user}")
    items = split.train.positives[user]
    if exclude is not None:
        items = items[items != exclude]
    return items.tolist()
