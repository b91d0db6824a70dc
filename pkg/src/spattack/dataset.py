"""Implicit-feedback datasets: MovieLens loading, synthetic power-law data,
leave-one-out splitting and negative sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import Stream, substream

EVAL_NEGATIVES = 100


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent interaction data."""


class ParseError(DatasetError):
    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int = 0


@dataclass(frozen=True)
class InteractionTable:
    """Columnar, deduplicated interactions with dense 0-based ids."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    n_users: int
    n_items: int
    user_ids: np.ndarray  # dense index -> raw id
    item_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_records(cls, records: Iterable[Interaction]) -> "InteractionTable":
        rows = [(r.user, r.item, r.timestamp) for r in records]
        if not rows:
            raise DatasetError("no interactions")
        arr = np.asarray(rows, dtype=np.int64)
        n_users = int(arr[:, 0].max()) + 1
        n_items = int(arr[:, 1].max()) + 1
        return _dedup(arr[:, 0], arr[:, 1], arr[:, 2], n_users, n_items,
                      np.arange(n_users), np.arange(n_items))


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    n_users: int
    n_items: int
    train_items: tuple[np.ndarray, ...]
    train_times: tuple[np.ndarray, ...]
    test_items: np.ndarray  # -1 where a user has no test interaction
    test_times: np.ndarray
    degrees: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def train(self, user: int) -> list[Interaction]:
        return [Interaction(user, int(i), int(t))
                for i, t in zip(self.train_items[user], self.train_times[user])]

    def test(self, user: int) -> Interaction | None:
        item = int(self.test_items[user])
        if item < 0:
            return None
        return Interaction(user, item, int(self.test_times[user]))

    @property
    def n_train(self) -> int:
        return int(sum(len(t) for t in self.train_items))

    @property
    def n_test(self) -> int:
        return int((self.test_items >= 0).sum())

    @property
    def n_interactions(self) -> int:
        return self.n_train + self.n_test

    @property
    def max_train_length(self) -> int:
        return max((len(t) for t in self.train_items), default=0)

    def testable_users(self) -> np.ndarray:
        return np.flatnonzero(self.test_items >= 0)

    @cached_property
    def interacted_mask(self) -> np.ndarray:
        """Boolean (n_users, n_items) matrix of train and test interactions."""
        mask = np.zeros((self.n_users, self.n_items), dtype=bool)
        for u, items in enumerate(self.train_items):
            mask[u, items] = True
        has_test = self.test_items >= 0
        mask[np.flatnonzero(has_test), self.test_items[has_test]] = True
        return mask

    @cached_property
    def _non_interacted(self) -> tuple[np.ndarray, ...]:
        mask = self.interacted_mask
        return tuple(np.flatnonzero(~mask[u]) for u in range(self.n_users))

    def non_interacted(self, user: int) -> np.ndarray:
        return self._non_interacted[user]

    def stats(self) -> dict:
        edges = self.n_interactions
        return {
            "name": self.name,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "interactions": edges,
            "train_interactions": self.n_train,
            "test_interactions": self.n_test,
            "sparsity": 1.0 - edges / (self.n_users * self.n_items),
            "max_train_length": self.max_train_length,
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int
    n_items: int
    interactions_per_user: int
    exponent: float
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1:
            raise DatasetError("synthetic dataset needs at least one user and one item")
        if not self.exponent > 1:
            raise DatasetError(f"exponent must be > 1, got {self.exponent}")
        if not 1 <= self.interactions_per_user < self.n_items:
            raise DatasetError(
                f"interactions_per_user must be in [1, n_items), got {self.interactions_per_user}")
        if self.seed < 0:
            raise DatasetError("seed must be non-negative")


def _dedup(users, items, times, n_users, n_items, user_ids, item_ids) -> InteractionTable:
    # earliest timestamp wins for duplicated (user, item) pairs
    order = np.lexsort((times, items, users))
    users, items, times = users[order], items[order], times[order]
    keep = np.ones(len(users), dtype=bool)
    keep[1:] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
    return InteractionTable(users[keep], items[keep], times[keep], n_users, n_items,
                            np.asarray(user_ids), np.asarray(item_ids))


def _split_fields(line: str) -> list[str]:
    if "::" in line:
        return line.split("::")
    return line.split()


def read_movielens(path: str | Path) -> InteractionTable:
    """Parse a MovieLens-style ratings file into a deduplicated table.

    Lines hold ``user item rating [timestamp]`` separated by ``::`` (ML-1M) or
    whitespace (ML-100K uses tabs). Ratings are discarded.
    """
    path = Path(path)
    raw: list[tuple[int, int, int]] = []
    with path.open("r", encoding="utf-8", errors="strict") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = _split_fields(stripped)
            if len(fields) not in (3, 4):
                raise ParseError(path, line_no, f"expected 3 or 4 fields, got {len(fields)}")
            try:
                user, item = int(fields[0]), int(fields[1])
                float(fields[2])
                ts = int(float(fields[3])) if len(fields) == 4 else 0
            except ValueError as exc:
                raise ParseError(path, line_no, f"non-numeric field ({exc})") from None
            if user <= 0 or item <= 0:
                raise ParseError(path, line_no, "ids must be positive integers")
            raw.append((user, item, ts))
    if not raw:
        raise DatasetError(f"{path}: no interactions")
    arr = np.asarray(raw, dtype=np.int64)
    user_ids, users = np.unique(arr[:, 0], return_inverse=True)
    item_ids, items = np.unique(arr[:, 1], return_inverse=True)
    return _dedup(users.astype(np.int64), items.astype(np.int64), arr[:, 2],
                  len(user_ids), len(item_ids), user_ids, item_ids)


def leave_one_out_split(interactions: InteractionTable | Sequence[Interaction],
                        name: str = "dataset") -> InteractionDataset:
    """Hold out each user's latest interaction as the test item.

    Ties on the timestamp go to the larger item index. Users with a single
    interaction keep it in train and get no test entry.
    """
    if not isinstance(interactions, InteractionTable):
        interactions = InteractionTable.from_records(interactions)
    t = interactions
    order = np.lexsort((t.items, t.timestamps, t.users))
    users, items, times = t.users[order], t.items[order], t.timestamps[order]
    bounds = np.searchsorted(users, np.arange(t.n_users + 1))

    train_items, train_times = [], []
    test_items = np.full(t.n_users, -1, dtype=np.int64)
    test_times = np.zeros(t.n_users, dtype=np.int64)
    for u in range(t.n_users):
        lo, hi = bounds[u], bounds[u + 1]
        if hi - lo >= 2:
            test_items[u] = items[hi - 1]
            test_times[u] = times[hi - 1]
            hi -= 1
        train_items.append(items[lo:hi].copy())
        train_times.append(times[lo:hi].copy())

    degrees = np.zeros(t.n_items, dtype=np.int64)
    for tr in train_items:
        degrees[tr] += 1
    return InteractionDataset(
        n_users=t.n_users, n_items=t.n_items,
        train_items=tuple(train_items), train_times=tuple(train_times),
        test_items=test_items, test_times=test_times, degrees=degrees,
        user_ids=t.user_ids, item_ids=t.item_ids, name=name,
    )


def load_movielens(path: str | Path, name: str | None = None) -> InteractionDataset:
    path = Path(path)
    return leave_one_out_split(read_movielens(path), name=name or path.parent.name or path.stem)


def sample_train_negatives(dataset: InteractionDataset, user: int, count: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` distinct items the user never interacted with."""
    if count < 1:
        raise ValueError("count must be >= 1")
    candidates = dataset.non_interacted(user)
    if len(candidates) == 0:
        raise DatasetError(f"user {user} interacted with every item")
    if count > len(candidates):
        raise DatasetError(
            f"user {user}: {count} negatives requested, only {len(candidates)} candidates")
    return rng.choice(candidates, size=count, replace=False)


def sample_eval_negatives(dataset: InteractionDataset, user: int,
                          rng: np.random.Generator, count: int = EVAL_NEGATIVES) -> np.ndarray:
    """The evaluation candidates: ``count`` distinct non-interacted items."""
    candidates = dataset.non_interacted(user)
    if len(candidates) < count:
        raise DatasetError(
            f"user {user}: only {len(candidates)} non-interacted items, need {count}")
    return rng.choice(candidates, size=count, replace=False)


def generate_synthetic(spec: SyntheticSpec, name: str | None = None,
                       chunk: int = 256) -> InteractionDataset:
    """Users draw items without replacement with weight ``rank ** -exponent``.

    Sampling uses Gumbel-top-k, which is distributionally identical to
    sequential weighted draws; draw order becomes the timestamp.
    """
    spec.validate()
    rng = substream(spec.seed, Stream.SYNTHETIC)
    k = spec.interactions_per_user
    log_w = -spec.exponent * np.log(np.arange(1, spec.n_items + 1, dtype=np.float64))
    users, items, times = [], [], []
    for start in range(0, spec.n_users, chunk):
        rows = min(chunk, spec.n_users - start)
        keys = log_w + rng.gumbel(size=(rows, spec.n_items))
        top = np.argpartition(-keys, k - 1, axis=1)[:, :k]
        top_keys = np.take_along_axis(keys, top, axis=1)
        drawn = np.take_along_axis(top, np.argsort(-top_keys, axis=1, kind="stable"), axis=1)
        users.append(np.repeat(np.arange(start, start + rows), k))
        items.append(drawn.ravel())
        times.append(np.tile(np.arange(k), rows))
    table = _dedup(np.concatenate(users), np.concatenate(items), np.concatenate(times),
                   spec.n_users, spec.n_items,
                   np.arange(1, spec.n_users + 1), np.arange(1, spec.n_items + 1))
    ds = leave_one_out_split(table, name=name or "synthetic")
    ds.meta.update({"synthetic": {
        "n_users": spec.n_users, "n_items": spec.n_items,
        "interactions_per_user": k, "exponent": spec.exponent, "seed": spec.seed}})
    return ds
