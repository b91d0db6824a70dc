"""Malicious uploads: the Spattack family and baseline poisoning attacks.

Model-poisoning attacks return a :class:`SparseRoundUpdate` whose client ids
start at ``first_client``. Data-poisoning baselines (LabelFlip, FedAttack)
only rewrite a malicious client's training pairs; the honest local step does
the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .aggregation import SparseRoundUpdate

NONE = "none"
SPATTACK_OD = "spattack_od"
SPATTACK_OS = "spattack_os"
SPATTACK_LD = "spattack_ld"
SPATTACK_LS = "spattack_ls"
LABELFLIP = "labelflip"
GAUSSIAN = "gaussian"
LIE = "lie"
FANG = "fang"
FEDATTACK = "fedattack"

KINDS = (NONE, SPATTACK_OD, SPATTACK_OS, SPATTACK_LD, SPATTACK_LS,
         LABELFLIP, GAUSSIAN, LIE, FANG, FEDATTACK)
OMNISCIENT = frozenset({SPATTACK_OD, SPATTACK_OS, GAUSSIAN, LIE, FANG})
SPARSE_CAPABILITY = frozenset({SPATTACK_OS, SPATTACK_LS})
DATA_POISONING = frozenset({LABELFLIP, FEDATTACK})

# Published malicious-client counts per attack ratio; some exceed the floor rule by one.
PUBLISHED_COUNTS: dict[str, dict[float, int]] = {
    "ml100k": {0.01: 9, 0.03: 29, 0.05: 49, 0.10: 105, 0.15: 166},
    "ml1m": {0.01: 61, 0.03: 186, 0.05: 317, 0.10: 671, 0.15: 1066},
    "steam": {0.01: 37, 0.03: 116, 0.05: 197, 0.10: 417, 0.15: 662},
}


@dataclass
class AttackPlan:
    kind: str = NONE
    malicious_count: int = 0
    malicious_ratio: float = 0.0
    start_epoch: int = 0
    max_poisoned_items: int | None = None
    noise_std: float = 1.0
    lie_scale: float = 0.1
    lie_direction: int = 1
    fang_scale_range: tuple[float, float] = (3.0, 4.0)
    os_divisor: str = "per_item"
    poisoned_items: list[np.ndarray] = field(default_factory=list)
    seed: int = 0
    count_overridden: bool = False

    def validate(self, n_benign: int | None = None) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        if self.malicious_count < 0 or self.start_epoch < 0:
            raise ValueError("malicious_count and start_epoch must be >= 0")
        if not 0 <= self.malicious_ratio < 1:
            raise ValueError("malicious_ratio must be in [0, 1)")
        if (n_benign is not None and not self.count_overridden and self.malicious_count
                and self.malicious_count / (n_benign + self.malicious_count)
                > self.malicious_ratio + 1e-12):
            raise ValueError(f"{self.malicious_count} malicious clients exceed ratio "
                             f"{self.malicious_ratio} for {n_benign} benign clients")
        if self.noise_std < 0 or self.lie_scale < 0:
            raise ValueError("noise_std and lie_scale must be >= 0")
        if self.lie_direction not in (-1, 1):
            raise ValueError("lie_direction must be +1 or -1")
        lo, hi = self.fang_scale_range
        if not 0 <= lo <= hi:
            raise ValueError("fang_scale_range must satisfy 0 <= low <= high")
        if self.os_divisor not in ("per_item", "global"):
            raise ValueError("os_divisor must be 'per_item' or 'global'")
        if self.max_poisoned_items is not None and self.max_poisoned_items < 1:
            raise ValueError("max_poisoned_items must be >= 1")
        for lst in self.poisoned_items:
            if len(np.unique(lst)) != len(lst):
                raise ValueError("poisoned item lists must not repeat items")
            if self.max_poisoned_items is not None and len(lst) > self.max_poisoned_items:
                raise ValueError("poisoned item list longer than max_poisoned_items")

    @property
    def active(self) -> bool:
        return self.kind != NONE and self.malicious_count > 0


def plan_malicious_count(n: int, ratio: float,
                         overrides: Mapping[float, int] | None = None) -> int:
    """Largest ``k`` with ``k / (n + k) <= ratio``, unless ``overrides`` lists the ratio."""
    if not 0 <= ratio < 1:
        raise ValueError("ratio must be in [0, 1)")
    if overrides:
        for r, count in overrides.items():
            if math.isclose(float(r), ratio, rel_tol=0, abs_tol=1e-9):
                return int(count)
    k = math.floor(ratio * n / (1 - ratio) + 1e-9)
    while k > 0 and k > ratio * (n + k):
        k -= 1
    return k


# -- helpers ------------------------------------------------------------------

def _replicate(items: np.ndarray, vectors: np.ndarray, n_malicious: int,
               first_client: int) -> SparseRoundUpdate:
    """Every malicious client uploads ``vectors[i]`` for ``items[i]``."""
    k = len(items)
    return SparseRoundUpdate(np.repeat(items, n_malicious),
                             np.tile(np.arange(first_client, first_client + n_malicious), k),
                             np.repeat(vectors, n_malicious, axis=0), presorted=True)


def benign_item_moments(benign: SparseRoundUpdate):
    """Per-item mean and population std of the benign uploads."""
    items, starts, counts = benign.segments()
    if len(items) == 0:
        return items, np.empty((0, benign.dim)), np.empty((0, benign.dim))
    mean = np.add.reduceat(benign.grads, starts, axis=0) / counts[:, None]
    dev = benign.grads - np.repeat(mean, counts, axis=0)
    std = np.sqrt(np.add.reduceat(dev * dev, starts, axis=0) / counts[:, None])
    return items, mean, std


# -- Spattack -----------------------------------------------------------------

def spattack_od(benign: SparseRoundUpdate, n_malicious: int,
                first_client: int) -> SparseRoundUpdate:
    """Each malicious client uploads ``-(1/n_malicious) * sum(benign)`` for every item with benign uploads."""
    if n_malicious < 1:
        raise ValueError("n_malicious must be >= 1")
    items, sums, _ = benign.item_sums()
    return _replicate(items, -sums / n_malicious, n_malicious, first_client)


def spattack_ld(item_universe: np.ndarray, n_malicious: int, noise_std: float,
                rng: np.random.Generator, dim: int, first_client: int) -> SparseRoundUpdate:
    """Fresh Gaussian noise per item, uploaded identically by all malicious clients."""
    if n_malicious < 1:
        raise ValueError("n_malicious must be >= 1")
    items = np.asarray(item_universe, dtype=np.int64)
    noise = rng.normal(0.0, 1.0, size=(len(items), dim)) * noise_std
    return _replicate(items, noise, n_malicious, first_client)


def sample_poisoned_items(degrees: np.ndarray, max_items: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Distinct items drawn without replacement with probability proportional to degree."""
    if max_items < 1:
        raise ValueError("max_items must be >= 1")
    degrees = np.asarray(degrees, dtype=float)
    candidates = np.flatnonzero(degrees > 0)
    if len(candidates) <= max_items:
        return candidates.copy()
    p = degrees[candidates] / degrees[candidates].sum()
    return rng.choice(candidates, size=max_items, replace=False, p=p)


def sample_poisoned_lists(degrees: np.ndarray, n_malicious: int, max_items: int,
                          rng: np.random.Generator) -> list[np.ndarray]:
    return [np.sort(sample_poisoned_items(degrees, max_items, rng)) for _ in range(n_malicious)]


def _poisoners(poisoned_items: Sequence[np.ndarray], first_client: int):
    """Flattened ``(item, client)`` pairs sorted by item then client."""
    items = np.concatenate([np.asarray(l, dtype=np.int64) for l in poisoned_items]) \
        if poisoned_items else np.empty(0, np.int64)
    clients = np.concatenate([np.full(len(l), first_client + i, dtype=np.int64)
                              for i, l in enumerate(poisoned_items)]) \
        if poisoned_items else np.empty(0, np.int64)
    order = np.lexsort((clients, items))
    return items[order], clients[order]


def spattack_os(benign: SparseRoundUpdate, poisoned_items: Sequence[np.ndarray],
                first_client: int, divisor: str = "per_item") -> SparseRoundUpdate:
    """Negated benign sums, restricted to each client's poisoned list.

    With ``divisor="per_item"`` the sum for item ``j`` is split among the
    clients that poison ``j``, so their total cancels the benign sum exactly.
    ``divisor="global"`` splits it by the total malicious count instead.
    """
    b_items, sums, _ = benign.item_sums()
    p_items, p_clients = _poisoners(poisoned_items, first_client)
    pos = np.searchsorted(b_items, p_items)
    seen = (pos < len(b_items)) & (b_items[np.minimum(pos, len(b_items) - 1)] == p_items) \
        if len(b_items) else np.zeros(len(p_items), dtype=bool)
    p_items, p_clients, pos = p_items[seen], p_clients[seen], pos[seen]
    if divisor == "per_item":
        _, inverse, per_item = np.unique(p_items, return_inverse=True, return_counts=True)
        share = per_item[inverse].astype(float)
    else:
        share = np.full(len(p_items), float(len(poisoned_items)))
    return SparseRoundUpdate(p_items, p_clients, -sums[pos] / share[:, None], presorted=True)


def spattack_ls(poisoned_items: Sequence[np.ndarray], noise_std: float,
                rng: np.random.Generator, dim: int, n_items: int,
                first_client: int) -> SparseRoundUpdate:
    """Per-item Gaussian noise shared by every client poisoning that item."""
    noise = rng.normal(0.0, 1.0, size=(n_items, dim)) * noise_std
    p_items, p_clients = _poisoners(poisoned_items, first_client)
    return SparseRoundUpdate(p_items, p_clients, noise[p_items], presorted=True)


# -- model-poisoning baselines ------------------------------------------------

def baseline_gaussian(benign: SparseRoundUpdate, n_malicious: int,
                      rng: np.random.Generator, first_client: int) -> SparseRoundUpdate:
    """Per item, sample each client's upload from the benign per-coordinate normal fit."""
    items, mean, std = benign_item_moments(benign)
    draws = rng.normal(0.0, 1.0, size=(n_malicious, len(items), benign.dim))
    samples = mean[None] + std[None] * draws  # (client, item, dim)
    grads = samples.transpose(1, 0, 2).reshape(-1, benign.dim)
    clients = np.tile(np.arange(first_client, first_client + n_malicious), len(items))
    return SparseRoundUpdate(np.repeat(items, n_malicious), clients, grads, presorted=True)


def baseline_lie(benign: SparseRoundUpdate, n_malicious: int, z: float,
                 first_client: int, direction: int = 1) -> SparseRoundUpdate:
    """Every client uploads ``mean + direction * z * std`` of the benign uploads."""
    items, mean, std = benign_item_moments(benign)
    return _replicate(items, mean + direction * z * std, n_malicious, first_client)


def baseline_fang(benign: SparseRoundUpdate, n_malicious: int, rng: np.random.Generator,
                  first_client: int, scale_range: tuple[float, float] = (3.0, 4.0),
                  ) -> tuple[SparseRoundUpdate, np.ndarray]:
    """Each client uploads ``-lambda * mean(benign)`` with its own ``lambda ~ U(scale_range)``.

    Returns the update and the per-client scales.
    """
    items, mean, _ = benign_item_moments(benign)
    scales = rng.uniform(scale_range[0], scale_range[1], size=n_malicious)
    grads = (-scales[None, :, None] * mean[:, None, :]).reshape(-1, benign.dim)
    clients = np.tile(np.arange(first_client, first_client + n_malicious), len(items))
    return SparseRoundUpdate(np.repeat(items, n_malicious), clients, grads, presorted=True), scales


# -- data-poisoning baselines -------------------------------------------------

def baseline_labelflip(positives: np.ndarray, negatives: np.ndarray):
    """Swap the roles of positives and negatives in every BPR pair."""
    return np.asarray(negatives).copy(), np.asarray(positives).copy()


def baseline_fedattack(user_embedding: np.ndarray, profile_items: np.ndarray,
                       item_embeddings: np.ndarray, count: int | None = None):
    """Pick training pairs against the client's own interest.

    Among items outside the profile, the ``count`` most similar to the user
    embedding become negatives and the ``count`` least similar become
    positives. Returns ``(positives, negatives)``.
    """
    n_items = item_embeddings.shape[0]
    mask = np.ones(n_items, dtype=bool)
    mask[np.asarray(profile_items, dtype=np.int64)] = False
    candidates = np.flatnonzero(mask)
    if count is None:
        count = len(profile_items)
    count = min(count, len(candidates) // 2)
    scores = item_embeddings[candidates] @ user_embedding
    ranked = candidates[np.lexsort((candidates, -scores))]  # most similar first
    negatives = ranked[:count]
    positives = ranked[len(ranked) - count:][::-1] if count else ranked[:0]
    return positives.copy(), negatives.copy()


@dataclass(frozen=True)
class AttackAudit:
    epoch: int
    attacked_items: int
    malicious_clients: int
    grad_norm_mean: float
    grad_norm_max: float

    @classmethod
    def of(cls, epoch: int, update: SparseRoundUpdate) -> "AttackAudit":
        if len(update) == 0:
            return cls(epoch, 0, 0, 0.0, 0.0)
        norms = np.linalg.norm(update.grads, axis=1)
        return cls(epoch, int(len(np.unique(update.items))), int(len(np.unique(update.clients))),
                   float(norms.mean()), float(norms.max()))
