import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spattack.dataset import Interaction, leave_one_out_split
from spattack.evaluation import (Evaluator, batch_ranks, evaluate, hr_at_k, ndcg_at_k,
                                 rank_test_item)
from spattack.model import init_embeddings


def full_sort_rank(user, test_item, negatives, V):
    """Sort all 101 candidates by score, test item placed after any equal score."""
    cands = [(float(V[j] @ user), 1, j) for j in negatives] + [(float(V[test_item] @ user), 0, test_item)]
    cands.sort(key=lambda c: (-c[0], -c[1]))
    return 1 + [c[2] for c in cands].index(test_item)


def test_rank_examples():
    V = np.vstack([np.full((100, 2), 0.1), [[1.0, 1.0]]])
    u = np.array([1.0, 0.0])
    assert rank_test_item(u, 100, np.arange(100), V) == 1
    flat = np.ones((101, 2))
    assert rank_test_item(u, 100, np.arange(100), flat) == 101


def test_rank_matches_full_sort():
    rng = np.random.default_rng(0)
    for _ in range(300):
        # small integers: scores are exact, so ties are genuine
        V = rng.integers(-3, 4, size=(150, 3)).astype(float)
        negs = rng.choice(np.arange(1, 150), 100, replace=False)
        u = rng.integers(-3, 4, size=3).astype(float)
        assert rank_test_item(u, 0, negs, V) == full_sort_rank(u, 0, negs, V)


def test_batch_ranks_agree():
    rng = np.random.default_rng(1)
    V = rng.normal(size=(200, 4))
    U = rng.normal(size=(7, 4))
    tests = rng.integers(0, 200, 7)
    negs = np.stack([rng.choice(np.setdiff1d(np.arange(200), [t]), 100, replace=False) for t in tests])
    got = batch_ranks(U, tests, negs, V)
    assert got.tolist() == [rank_test_item(U[i], tests[i], negs[i], V) for i in range(7)]


def test_non_finite_scores_rank_last():
    V = np.ones((101, 2))
    V[100] = np.nan
    assert batch_ranks(np.ones((1, 2)), np.array([100]), np.arange(100)[None], V)[0] == 101


@pytest.mark.parametrize("rank,k,hit", [(1, 5, 1), (6, 5, 0), (5, 5, 1)])
def test_hr(rank, k, hit):
    assert hr_at_k(rank, k) == hit


def test_ndcg():
    assert ndcg_at_k(1, 10) == 1.0
    assert ndcg_at_k(3, 10) == 0.5
    assert ndcg_at_k(11, 10) == 0.0
    with pytest.raises(ValueError):
        ndcg_at_k(0, 5)
    with pytest.raises(ValueError):
        hr_at_k(0, 5)


@settings(max_examples=200)
@given(st.integers(1, 101), st.integers(1, 50), st.integers(0, 50))
def test_metrics_monotone_in_k(rank, k, extra):
    assert hr_at_k(rank, k + extra) >= hr_at_k(rank, k)
    assert ndcg_at_k(rank, k + extra) >= ndcg_at_k(rank, k)


def test_single_user_rank_one():
    recs = [Interaction(0, i, i) for i in range(3)]
    recs += [Interaction(1, i, 0) for i in range(3, 110)]
    ds = leave_one_out_split(recs)
    ev = Evaluator(ds, 0, users=np.array([0]))
    U = np.zeros((2, 2))
    U[0] = [1.0, 0.0]
    V = np.zeros((ds.n_items, 2))
    V[int(ds.test_items[0])] = [5.0, 0.0]
    r = ev.evaluate(U, V)
    assert (r.hr5, r.ndcg5, r.hr10, r.ndcg10, r.evaluated_users) == (1.0, 1.0, 1.0, 1.0, 1)


def test_no_testable_users():
    ds = leave_one_out_split([Interaction(0, 0, 0), Interaction(1, 1, 0)])
    with pytest.raises(ValueError):
        Evaluator(ds, 0)


def test_negatives_fixed_across_calls(ml100k):
    a = Evaluator(ml100k, 3)
    b = Evaluator(ml100k, 3)
    assert np.array_equal(a.negatives, b.negatives)
    assert not np.array_equal(a.negatives, Evaluator(ml100k, 4).negatives)


def test_untrained_model_is_random_ranking(ml100k):
    rng = np.random.default_rng(0)
    U = init_embeddings(ml100k.n_users, 32, rng)
    V = init_embeddings(ml100k.n_items, 32, rng)
    r = evaluate(U, V, ml100k, seed=0)
    p = 10 / 101
    assert abs(r.hr10 - p) <= 3 * math.sqrt(p * (1 - p) / 943)
    assert r.hr10 >= r.hr5 and r.ndcg10 >= r.ndcg5


def test_rank_scale_invariance(ml100k):
    rng = np.random.default_rng(1)
    U = rng.normal(size=(ml100k.n_users, 8))
    V = rng.normal(size=(ml100k.n_items, 8))
    ev = Evaluator(ml100k, 0)
    assert np.array_equal(ev.ranks(U, V), ev.ranks(U * 3.0, V * 0.25))
