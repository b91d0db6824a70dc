"""Leave-one-out ranking metrics against 100 sampled negatives."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import InteractionDataset, sample_eval_negatives
from .seeding import Stream, substream


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    hr5: float
    ndcg5: float
    hr10: float
    ndcg10: float
    evaluated_users: int
    divergence_flag: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def rank_test_item(user_embedding: np.ndarray, test_item: int, negatives,
                   item_embeddings: np.ndarray) -> int:
    """1-based rank of the test item; ties with a negative count against it."""
    user_embedding = np.asarray(user_embedding, dtype=float)
    scores = item_embeddings[np.asarray(negatives, dtype=np.int64)] @ user_embedding
    target = item_embeddings[test_item] @ user_embedding
    return 1 + int(np.count_nonzero(~(scores < target)))


def batch_ranks(user_embeddings: np.ndarray, test_items: np.ndarray, negatives: np.ndarray,
                item_embeddings: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank_test_item` for rows of users."""
    target = np.einsum("ij,ij->i", user_embeddings, item_embeddings[test_items])
    scores = np.einsum("ikj,ij->ik", item_embeddings[negatives], user_embeddings)
    # written as ~(<) so non-finite scores rank the test item last
    return 1 + np.count_nonzero(~(scores < target[:, None]), axis=1)


def hr_at_k(rank: int, k: int) -> int:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


class Evaluator:
    """Holds one fixed set of evaluation negatives per testable user.

    The negatives come from a dedicated substream of ``seed`` so they are
    identical across epochs and never touch training randomness.
    """

    def __init__(self, dataset: InteractionDataset, seed: int, num_negatives: int = 100,
                 users: np.ndarray | None = None):
        self.dataset = dataset
        self.users = dataset.testable_users() if users is None else np.asarray(users)
        if len(self.users) == 0:
            raise ValueError("no users with a test item to evaluate")
        self.test_items = dataset.test_items[self.users]
        self.negatives = np.stack([
            sample_eval_negatives(dataset, int(u), substream(seed, Stream.EVAL_NEGATIVES, int(u)),
                                  num_negatives)
            for u in self.users
        ])

    def ranks(self, user_embeddings: np.ndarray, item_embeddings: np.ndarray) -> np.ndarray:
        return batch_ranks(user_embeddings[self.users], self.test_items, self.negatives,
                           item_embeddings)

    def evaluate(self, user_embeddings: np.ndarray, item_embeddings: np.ndarray,
                 epoch: int = 0, divergence_flag: bool = False) -> EpochReport:
        ranks = self.ranks(user_embeddings, item_embeddings)
        with np.errstate(invalid="ignore"):
            gain = 1.0 / np.log2(ranks + 1.0)
        return EpochReport(
            epoch=epoch,
            hr5=float(np.mean(ranks <= 5)),
            ndcg5=float(np.mean(np.where(ranks <= 5, gain, 0.0))),
            hr10=float(np.mean(ranks <= 10)),
            ndcg10=float(np.mean(np.where(ranks <= 10, gain, 0.0))),
            evaluated_users=int(len(ranks)),
            divergence_flag=divergence_flag,
        )


def evaluate(user_embeddings: np.ndarray, item_embeddings: np.ndarray,
             dataset: InteractionDataset, seed: int, epoch: int = 0) -> EpochReport:
    """One-shot evaluation over every benign user with a test item."""
    return Evaluator(dataset, seed).evaluate(user_embeddings, item_embeddings, epoch)
