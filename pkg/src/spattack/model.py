"""Dot-product matrix factorization with the BPR pairwise loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DIM = 32
DEFAULT_LR = 0.01
INIT_STD = 0.01


@dataclass
class EmbeddingState:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    learning_rate: float = DEFAULT_LR

    @property
    def dim(self) -> int:
        return self.item_embeddings.shape[1]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user_embeddings.copy(), self.item_embeddings.copy(),
                              self.learning_rate)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_embeddings).all()
                    and np.isfinite(self.item_embeddings).all())


@dataclass(frozen=True)
class PairGradient:
    grad_user: np.ndarray
    grad_pos_item: np.ndarray
    grad_neg_item: np.ndarray


def init_embeddings(rows: int, dim: int, rng: np.random.Generator,
                    std: float = INIT_STD) -> np.ndarray:
    if rows < 1 or dim < 1:
        raise ValueError(f"rows and dim must be >= 1, got ({rows}, {dim})")
    return rng.normal(0.0, std, size=(rows, dim))


def predict_score(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(u @ v)


def log_sigmoid(x):
    """Stable ``ln sigma(x)`` for any real ``x``."""
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bpr_pair_loss(u: np.ndarray, v_pos: np.ndarray, v_neg: np.ndarray) -> float:
    """``-ln sigma(u . v_pos - u . v_neg)`` in softplus form."""
    x = predict_score(u, v_pos) - predict_score(u, v_neg)
    return float(np.logaddexp(0.0, -x))


def bpr_pair_gradient(u: np.ndarray, v_pos: np.ndarray, v_neg: np.ndarray) -> PairGradient:
    u, v_pos, v_neg = (np.asarray(a, dtype=float) for a in (u, v_pos, v_neg))
    diff = v_pos - v_neg
    x = float(u @ diff)
    g = -float(sigmoid(np.array([-x]))[0])  # -(1 - sigma(x))
    grad_pos = g * u
    return PairGradient(grad_user=g * diff, grad_pos_item=grad_pos, grad_neg_item=-grad_pos)


def batch_pair_coefficients(u_rows: np.ndarray, v_pos: np.ndarray,
                            v_neg: np.ndarray) -> np.ndarray:
    """Per-pair ``g = -(1 - sigma(x))`` for stacked pairs."""
    x = np.einsum("ij,ij->i", u_rows, v_pos - v_neg)
    return -sigmoid(-x)


def client_local_step(user_embedding: np.ndarray, positives, negatives,
                      item_embeddings: np.ndarray, learning_rate: float = DEFAULT_LR,
                      ) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """One full-batch BPR step for a single client.

    Returns the SGD-updated user embedding and the summed item gradients,
    keyed by item, touching only the given positives and negatives. All
    gradients are taken against the broadcast ``item_embeddings``.
    """
    positives = np.asarray(positives, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    if len(positives) != len(negatives):
        raise ValueError("negatives must align 1:1 with positives")
    u = np.asarray(user_embedding, dtype=float)
    if len(positives) == 0:
        return u.copy(), {}
    grad_user = np.zeros_like(u)
    item_grads: dict[int, np.ndarray] = {}
    for p, n in zip(positives.tolist(), negatives.tolist()):
        pg = bpr_pair_gradient(u, item_embeddings[p], item_embeddings[n])
        grad_user += pg.grad_user
        for item, grad in ((p, pg.grad_pos_item), (n, pg.grad_neg_item)):
            if item in item_grads:
                item_grads[item] = item_grads[item] + grad
            else:
                item_grads[item] = grad.copy()
    return u - learning_rate * grad_user, item_grads
