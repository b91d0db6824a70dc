"""Per-item (sparse) robust aggregation of item-embedding gradients.

Each item is aggregated on its own, using only the gradients uploaded for
it. The batched path groups items by upload count so that every group is a
dense ``(items, count, dim)`` block; the per-item functions are that same
code applied to a single item.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

MEAN = "mean"
MEDIAN = "median"
TRIMMED_MEAN = "trimmed_mean"
KRUM = "krum"
NORM_CLIP = "norm_clip"
KINDS = (MEAN, MEDIAN, TRIMMED_MEAN, KRUM, NORM_CLIP)

DEFAULT_CLIP_THRESHOLD = 0.5


class Inapplicable(ValueError):
    """The aggregator is undefined for this many uploads."""


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = MEAN
    trim_count: int = 0
    assumed_byzantine: int = 0
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregator {self.kind!r}; expected one of {KINDS}")
        if self.trim_count < 0:
            raise ValueError("trim_count must be >= 0")
        if self.assumed_byzantine < 0:
            raise ValueError("assumed_byzantine must be >= 0")
        if not self.clip_threshold > 0:
            raise ValueError("clip_threshold must be > 0")

    def min_uploads(self) -> int:
        """Smallest per-item upload count the aggregator handles without fallback."""
        if self.kind == TRIMMED_MEAN:
            return 2 * self.trim_count + 1
        if self.kind == KRUM:
            return self.assumed_byzantine + 3
        return 1


class SparseRoundUpdate:
    """All uploads of one round as columns sorted by ``(item, client)``."""

    __slots__ = ("items", "clients", "grads")

    def __init__(self, items: np.ndarray, clients: np.ndarray, grads: np.ndarray,
                 *, presorted: bool = False):
        items = np.asarray(items, dtype=np.int64)
        clients = np.asarray(clients, dtype=np.int64)
        grads = np.asarray(grads, dtype=np.float64)
        if grads.ndim != 2 or not (len(items) == len(clients) == len(grads)):
            raise ValueError("items, clients and grads must have matching lengths")
        if not presorted and len(items):
            order = np.lexsort((clients, items))
            items, clients, grads = items[order], clients[order], grads[order]
        if len(items) > 1:
            same = (items[1:] == items[:-1]) & (clients[1:] <= clients[:-1])
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise ValueError(f"duplicate or unsorted upload for item {items[k]}, "
                                 f"client {clients[k + 1]}")
        self.items, self.clients, self.grads = items, clients, grads

    @classmethod
    def empty(cls, dim: int) -> "SparseRoundUpdate":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, dim)),
                   presorted=True)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, Sequence[tuple[int, np.ndarray]]],
                     dim: int) -> "SparseRoundUpdate":
        items, clients, grads = [], [], []
        for item, uploads in mapping.items():
            for client, grad in uploads:
                items.append(item)
                clients.append(client)
                grads.append(np.asarray(grad, dtype=float))
        if not items:
            return cls.empty(dim)
        return cls(np.array(items), np.array(clients), np.stack(grads))

    @classmethod
    def from_client_maps(cls, maps: Mapping[int, Mapping[int, np.ndarray]],
                         dim: int) -> "SparseRoundUpdate":
        """Build from ``client -> {item: grad}`` maps."""
        mapping: dict[int, list] = {}
        for client, item_map in maps.items():
            for item, grad in item_map.items():
                mapping.setdefault(item, []).append((client, grad))
        return cls.from_mapping(mapping, dim)

    @property
    def dim(self) -> int:
        return self.grads.shape[1]

    def __len__(self) -> int:
        return len(self.items)

    def to_mapping(self) -> dict[int, list[tuple[int, np.ndarray]]]:
        out: dict[int, list[tuple[int, np.ndarray]]] = {}
        for item, client, grad in zip(self.items.tolist(), self.clients.tolist(), self.grads):
            out.setdefault(item, []).append((client, grad))
        return out

    def client_map(self, client: int) -> dict[int, np.ndarray]:
        sel = np.flatnonzero(self.clients == client)
        return {int(self.items[k]): self.grads[k] for k in sel}

    def client_ids(self) -> np.ndarray:
        return np.unique(self.clients)

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct items with the start offset and upload count of each."""
        if len(self.items) == 0:
            empty = np.empty(0, np.int64)
            return empty, empty, empty
        starts = np.flatnonzero(np.r_[True, self.items[1:] != self.items[:-1]])
        counts = np.diff(np.r_[starts, len(self.items)])
        return self.items[starts], starts, counts

    def item_sums(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-item sums, accumulated in ascending client order."""
        items, starts, counts = self.segments()
        if len(items) == 0:
            return items, np.empty((0, self.dim)), counts
        return items, np.add.reduceat(self.grads, starts, axis=0), counts

    def merge(self, *others: "SparseRoundUpdate") -> "SparseRoundUpdate":
        parts = [self, *others]
        return SparseRoundUpdate(np.concatenate([p.items for p in parts]),
                                 np.concatenate([p.clients for p in parts]),
                                 np.concatenate([p.grads for p in parts]))


# -- batched kernels over (n_items, count, dim) blocks ------------------------

def _mean(block: np.ndarray) -> np.ndarray:
    return block.sum(axis=1) / block.shape[1]


def _median(block: np.ndarray) -> np.ndarray:
    return np.median(block, axis=1)


def _trimmed_mean(block: np.ndarray, k: int) -> np.ndarray:
    c = block.shape[1]
    if c <= 2 * k:
        raise Inapplicable(f"trimmed mean with trim_count={k} needs > {2 * k} uploads, got {c}")
    if k == 0:
        return _mean(block)
    return _mean(np.sort(block, axis=1)[:, k:c - k])


def _krum(block: np.ndarray, f: int) -> np.ndarray:
    n_items, c, _ = block.shape
    m = c - f - 2
    if m < 1:
        raise Inapplicable(f"krum with f={f} needs >= {f + 3} uploads, got {c}")
    out = np.empty((n_items, block.shape[2]))
    off_diag = ~np.eye(c, dtype=bool)
    for i in range(n_items):
        dist = cdist(block[i], block[i], "sqeuclidean")
        others = dist[off_diag].reshape(c, c - 1)
        scores = np.partition(others, m - 1, axis=1)[:, :m].sum(axis=1)
        out[i] = block[i, int(np.argmin(scores))]
    return out


def _norm_clip(block: np.ndarray, tau: float) -> np.ndarray:
    norms = np.linalg.norm(block, axis=2, keepdims=True)
    with np.errstate(divide="ignore"):
        scale = np.where(norms > tau, tau / norms, 1.0)
    return _mean(block * scale)


def _kernel(spec: AggregatorSpec):
    if spec.kind == MEAN:
        return _mean
    if spec.kind == MEDIAN:
        return _median
    if spec.kind == TRIMMED_MEAN:
        return lambda b: _trimmed_mean(b, spec.trim_count)
    if spec.kind == KRUM:
        return lambda b: _krum(b, spec.assumed_byzantine)
    return lambda b: _norm_clip(b, spec.clip_threshold)


def _single(gradients: Sequence[np.ndarray], fn) -> np.ndarray | None:
    if len(gradients) == 0:
        return None
    block = np.stack([np.asarray(g, dtype=float) for g in gradients])[None]
    return fn(block)[0]


# -- per-item API -------------------------------------------------------------

def aggregate_item_mean(gradients: Sequence[np.ndarray]) -> np.ndarray | None:
    """Coordinate-wise mean; ``None`` when there is nothing to aggregate."""
    return _single(gradients, _mean)


def aggregate_item_median(gradients: Sequence[np.ndarray]) -> np.ndarray | None:
    """Coordinate-wise median; an even count yields the midpoint of the two middle values."""
    return _single(gradients, _median)


def aggregate_item_trimmed_mean(gradients: Sequence[np.ndarray],
                                trim_count: int) -> np.ndarray | None:
    """Drop ``trim_count`` largest and smallest values per coordinate, then average.

    Raises:
        Inapplicable: if there are not more than ``2 * trim_count`` gradients.
    """
    return _single(gradients, lambda b: _trimmed_mean(b, trim_count))


def aggregate_item_krum(gradients: Sequence[np.ndarray], f: int) -> np.ndarray | None:
    """Return the upload with the smallest Krum score.

    The score of an upload is the summed squared distance to its
    ``len(gradients) - f - 2`` nearest other uploads. Ties go to the earliest
    entry, which is the lowest client id for a sorted upload list.
    """
    return _single(gradients, lambda b: _krum(b, f))


def aggregate_item_norm_clip(gradients: Sequence[np.ndarray], tau: float) -> np.ndarray | None:
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return _single(gradients, lambda b: _norm_clip(b, tau))


def aggregate_item(gradients: Sequence[np.ndarray], spec: AggregatorSpec) -> np.ndarray | None:
    return _single(gradients, _kernel(spec))


# -- whole-round aggregation --------------------------------------------------

@dataclass(frozen=True)
class RoundLogEntry:
    item: int
    aggregator: str
    fallback: bool
    update_count: int


@dataclass(frozen=True)
class RoundLog:
    aggregator: str
    items: np.ndarray
    counts: np.ndarray
    fallback: np.ndarray

    @property
    def n_fallback(self) -> int:
        return int(self.fallback.sum())

    def entries(self) -> Iterator[RoundLogEntry]:
        for item, count, fb in zip(self.items.tolist(), self.counts.tolist(),
                                   self.fallback.tolist()):
            yield RoundLogEntry(item, MEDIAN if fb else self.aggregator, fb, count)


def sparse_aggregate(update: SparseRoundUpdate, spec: AggregatorSpec,
                     workers: int = 1) -> tuple[np.ndarray, np.ndarray, RoundLog]:
    """Aggregate every item present in ``update``.

    Returns ``(items, aggregated, log)``. Items whose upload count is too
    small for TrimmedMean or Krum fall back to the coordinate-wise median and
    are flagged in the log. Output does not depend on ``workers``.
    """
    items, starts, counts = update.segments()
    out = np.empty((len(items), update.dim))
    fallback = np.zeros(len(items), dtype=bool)
    kernel = _kernel(spec)
    min_count = spec.min_uploads()

    def run(c: int) -> None:
        sel = np.flatnonzero(counts == c)
        block = update.grads[starts[sel][:, None] + np.arange(c)]
        if c < min_count:
            out[sel] = _median(block)
            fallback[sel] = True
        else:
            out[sel] = kernel(block)

    groups = np.unique(counts).tolist()
    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, groups))
    else:
        for c in groups:
            run(c)
    return items, out, RoundLog(spec.kind, items, counts, fallback)


def sparse_aggregate_and_apply(update: SparseRoundUpdate, spec: AggregatorSpec,
                               item_embeddings: np.ndarray, learning_rate: float,
                               workers: int = 1) -> tuple[np.ndarray, RoundLog]:
    """``v_j <- v_j - lr * AGR(uploads for j)`` for each uploaded item; returns a new matrix."""
    items, agg, log = sparse_aggregate(update, spec, workers=workers)
    new = item_embeddings.copy()
    if len(items):
        new[items] -= learning_rate * agg
    return new, log
