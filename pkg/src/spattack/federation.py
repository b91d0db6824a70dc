"""Simulated federated training of MF item embeddings under attack."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import attacks as atk
from .aggregation import (KRUM, TRIMMED_MEAN, AggregatorSpec, RoundLog, SparseRoundUpdate,
                          sparse_aggregate_and_apply)
from .dataset import InteractionDataset, sample_train_negatives
from .evaluation import EpochReport, Evaluator
from .model import DEFAULT_DIM, DEFAULT_LR, INIT_STD, EmbeddingState, init_embeddings, sigmoid
from .seeding import Stream, substream

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6


class ConfigError(ValueError):
    pass


@dataclass
class FederationConfig:
    epochs: int = 200
    eval_every: int = 1
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    attack: atk.AttackPlan = field(default_factory=atk.AttackPlan)
    dim: int = DEFAULT_DIM
    learning_rate: float = DEFAULT_LR
    init_std: float = INIT_STD
    seed: int = 0
    negatives_per_positive: int = 1
    eval_negatives: int = 100
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.dim < 1 or not self.learning_rate > 0 or not self.init_std >= 0:
            raise ConfigError("dim >= 1, learning_rate > 0 and init_std >= 0 required")
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")


@dataclass
class RoundState:
    epoch: int
    embeddings: EmbeddingState
    malicious_user_embeddings: np.ndarray | None = None
    diverged: bool = False
    reports: list[EpochReport] = field(default_factory=list)


@dataclass(frozen=True)
class RoundOutcome:
    epoch: int
    benign: SparseRoundUpdate
    malicious: SparseRoundUpdate
    log: RoundLog
    audit: atk.AttackAudit | None
    diverged: bool


@dataclass
class ExperimentResult:
    reports: list[EpochReport]
    audits: list[atk.AttackAudit]
    fallback_counts: list[int]
    final_state: RoundState
    malicious_count: int

    @property
    def final(self) -> EpochReport:
        return self.reports[-1]

    @property
    def diverged(self) -> bool:
        return any(r.divergence_flag for r in self.reports)


# -- batched client computation -----------------------------------------------

def local_steps(user_rows: np.ndarray, item_embeddings: np.ndarray, client_ids: np.ndarray,
                pair_owner: np.ndarray, pos: np.ndarray, neg: np.ndarray,
                learning_rate: float) -> tuple[np.ndarray, SparseRoundUpdate]:
    """Full-batch BPR steps for many clients at once.

    ``pair_owner`` indexes into ``user_rows``/``client_ids`` for every
    ``(pos, neg)`` pair. Returns the SGD-updated user rows and the summed
    per-(client, item) gradients, all computed against ``item_embeddings``.
    """
    n_items, dim = item_embeddings.shape
    if len(pos) == 0:
        return user_rows.copy(), SparseRoundUpdate.empty(dim)
    u = user_rows[pair_owner]
    diff = item_embeddings[pos] - item_embeddings[neg]
    g = -sigmoid(-np.einsum("ij,ij->i", u, diff))
    grad_user = np.zeros_like(user_rows)
    np.add.at(grad_user, pair_owner, g[:, None] * diff)

    owner = np.concatenate([pair_owner, pair_owner])
    keys = owner * n_items + np.concatenate([pos, neg])
    vals = np.concatenate([g[:, None] * u, -g[:, None] * u])
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.zeros((len(uniq), dim))
    np.add.at(sums, inverse, vals)
    update = SparseRoundUpdate(uniq % n_items, client_ids[uniq // n_items], sums)
    return user_rows - learning_rate * grad_user, update


def _flatten_pairs(pairs: Sequence[tuple[np.ndarray, np.ndarray]]):
    owner = np.concatenate([np.full(len(p), i, dtype=np.int64) for i, (p, _) in enumerate(pairs)])
    pos = np.concatenate([np.asarray(p, dtype=np.int64) for p, _ in pairs])
    neg = np.concatenate([np.asarray(n, dtype=np.int64) for _, n in pairs])
    return owner, pos, neg


def _chunks(n: int, workers: int) -> list[range]:
    if workers <= 1 or n <= 1:
        return [range(n)]
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


class Federation:
    """Runs rounds of local BPR steps, attack injection and sparse aggregation."""

    def __init__(self, dataset: InteractionDataset, config: FederationConfig, workers: int = 1):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.workers = max(1, int(workers))
        self.plan = config.attack
        self.plan.validate(dataset.n_users)
        self.n_malicious = self.plan.malicious_count if self.plan.active else 0
        self.first_malicious = dataset.n_users
        self._preflight()
        self._prepare_attack()

    @cached_property
    def evaluator(self) -> Evaluator:
        return Evaluator(self.dataset, self.config.seed, self.config.eval_negatives)

    def _preflight(self) -> None:
        agg = self.config.aggregator
        max_uploads = self.dataset.n_users + self.n_malicious
        if agg.kind in (TRIMMED_MEAN, KRUM) and agg.min_uploads() > max_uploads:
            raise ConfigError(
                f"{agg.kind} needs at least {agg.min_uploads()} uploads per item but at most "
                f"{max_uploads} clients exist; it would fall back on every item")

    def _prepare_attack(self) -> None:
        plan = self.plan
        if plan.max_poisoned_items is None:
            plan.max_poisoned_items = max(1, self.dataset.max_train_length)
        needs_lists = plan.kind in atk.SPARSE_CAPABILITY or plan.kind in atk.DATA_POISONING
        if self.n_malicious and needs_lists and not plan.poisoned_items:
            rng = substream(self.config.seed, Stream.POISON_LISTS)
            plan.poisoned_items = atk.sample_poisoned_lists(
                self.dataset.degrees, self.n_malicious, plan.max_poisoned_items, rng)
        plan.validate(self.dataset.n_users)
        if plan.poisoned_items and len(plan.poisoned_items) != self.n_malicious and needs_lists:
            raise ConfigError("need one poisoned item list per malicious client")
        self._profile_complement = None
        if self.n_malicious and plan.kind in atk.DATA_POISONING:
            mask = np.ones((self.n_malicious, self.dataset.n_items), dtype=bool)
            for i, lst in enumerate(plan.poisoned_items):
                mask[i, lst] = False
            self._profile_complement = [np.flatnonzero(m) for m in mask]

    def initial_state(self) -> RoundState:
        cfg, ds = self.config, self.dataset
        users = init_embeddings(ds.n_users, cfg.dim, substream(cfg.seed, Stream.INIT_USERS),
                                cfg.init_std)
        items = init_embeddings(ds.n_items, cfg.dim, substream(cfg.seed, Stream.INIT_ITEMS),
                                cfg.init_std)
        mal = None
        if self.n_malicious and self.plan.kind in atk.DATA_POISONING:
            mal = init_embeddings(self.n_malicious, cfg.dim,
                                  substream(cfg.seed, Stream.MALICIOUS_INIT), cfg.init_std)
        return RoundState(0, EmbeddingState(users, items, cfg.learning_rate), mal)

    # -- round pieces ---------------------------------------------------------

    def _benign_pairs(self, users: range, epoch: int):
        ds, r = self.dataset, self.config.negatives_per_positive
        pairs = []
        for u in users:
            pos = ds.train_items[u]
            if len(pos) == 0:
                pairs.append((pos, pos))
                continue
            rng = substream(self.config.seed, Stream.TRAIN_NEGATIVES, epoch, u)
            # one draw per negative slot, each aligned with the positives
            neg = np.concatenate([sample_train_negatives(ds, u, len(pos), rng) for _ in range(r)])
            pairs.append((np.tile(pos, r), neg))
        return pairs

    def benign_round(self, state: RoundState) -> tuple[np.ndarray, SparseRoundUpdate]:
        ds, V = self.dataset, state.embeddings.item_embeddings
        U = state.embeddings.user_embeddings
        lr = self.config.learning_rate

        def run(users: range):
            owner, pos, neg = _flatten_pairs(self._benign_pairs(users, state.epoch))
            ids = np.arange(users.start, users.stop)
            return local_steps(U[users.start:users.stop], V, ids, owner, pos, neg, lr)

        chunks = _chunks(ds.n_users, self.workers)
        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(chunks[0])]
        new_users = np.concatenate([r[0] for r in results])
        update = results[0][1].merge(*[r[1] for r in results[1:]]) if len(results) > 1 \
            else results[0][1]
        return new_users, update

    def _data_poisoning_round(self, state: RoundState):
        plan, V = self.plan, state.embeddings.item_embeddings
        M = state.malicious_user_embeddings
        pairs = []
        for i in range(self.n_malicious):
            profile = plan.poisoned_items[i]
            if plan.kind == atk.LABELFLIP:
                rng = substream(self.config.seed, Stream.ATTACK, state.epoch, 1 + i)
                cand = self._profile_complement[i]
                neg = rng.choice(cand, size=min(len(profile), len(cand)), replace=False)
                pairs.append(atk.baseline_labelflip(profile[:len(neg)], neg))
            else:
                pairs.append(atk.baseline_fedattack(M[i], profile, V))
        owner, pos, neg = _flatten_pairs(pairs)
        ids = np.arange(self.first_malicious, self.first_malicious + self.n_malicious)
        return local_steps(M, V, ids, owner, pos, neg, self.config.learning_rate)

    def malicious_round(self, state: RoundState, benign: SparseRoundUpdate):
        """Malicious uploads for this round and the updated malicious user rows (if any)."""
        plan, ds, cfg = self.plan, self.dataset, self.config
        k, first, dim = self.n_malicious, self.first_malicious, cfg.dim
        rng = substream(cfg.seed, Stream.ATTACK, state.epoch, 0)
        kind = plan.kind
        if kind in atk.DATA_POISONING:
            return self._data_poisoning_round(state)
        if kind == atk.SPATTACK_OD:
            update = atk.spattack_od(benign, k, first)
        elif kind == atk.SPATTACK_OS:
            update = atk.spattack_os(benign, plan.poisoned_items, first, plan.os_divisor)
        elif kind == atk.SPATTACK_LD:
            update = atk.spattack_ld(np.arange(ds.n_items), k, plan.noise_std, rng, dim, first)
        elif kind == atk.SPATTACK_LS:
            update = atk.spattack_ls(plan.poisoned_items, plan.noise_std, rng, dim, ds.n_items,
                                     first)
        elif kind == atk.GAUSSIAN:
            update = atk.baseline_gaussian(benign, k, rng, first)
        elif kind == atk.LIE:
            update = atk.baseline_lie(benign, k, plan.lie_scale, first, plan.lie_direction)
        elif kind == atk.FANG:
            update, _ = atk.baseline_fang(benign, k, rng, first, plan.fang_scale_range)
        else:
            raise ConfigError(f"unhandled attack kind {kind!r}")
        return state.malicious_user_embeddings, update

    def run_round(self, state: RoundState) -> tuple[RoundState, RoundOutcome]:
        cfg = self.config
        new_users, benign = self.benign_round(state)
        malicious = SparseRoundUpdate.empty(cfg.dim)
        new_mal = state.malicious_user_embeddings
        audit = None
        if self.n_malicious and state.epoch >= self.plan.start_epoch:
            new_mal, malicious = self.malicious_round(state, benign)
            audit = atk.AttackAudit.of(state.epoch, malicious)
        merged = benign.merge(malicious) if len(malicious) else benign
        new_items, round_log = sparse_aggregate_and_apply(
            merged, cfg.aggregator, state.embeddings.item_embeddings, cfg.learning_rate,
            workers=self.workers)
        emb = EmbeddingState(new_users, new_items, cfg.learning_rate)
        diverged = state.diverged or self._diverged(emb)
        nxt = RoundState(state.epoch + 1, emb, new_mal, diverged, state.reports)
        return nxt, RoundOutcome(state.epoch, benign, malicious, round_log, audit, diverged)

    def _diverged(self, emb: EmbeddingState) -> bool:
        t = self.config.divergence_threshold
        for m in (emb.user_embeddings, emb.item_embeddings):
            if not np.isfinite(m).all() or np.abs(m).max() > t:
                return True
        return False

    def evaluate(self, state: RoundState, epoch: int) -> EpochReport:
        return self.evaluator.evaluate(state.embeddings.user_embeddings,
                                       state.embeddings.item_embeddings, epoch, state.diverged)

    def run(self, state: RoundState | None = None,
            on_epoch: Callable[[EpochReport], None] | None = None) -> ExperimentResult:
        cfg = self.config
        state = state or self.initial_state()
        audits, fallbacks = [], []
        while state.epoch < cfg.epochs:
            state, outcome = self.run_round(state)
            fallbacks.append(outcome.log.n_fallback)
            if outcome.audit is not None:
                audits.append(outcome.audit)
            epoch = outcome.epoch
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                report = self.evaluate(state, epoch)
                state.reports.append(report)
                if on_epoch is not None:
                    on_epoch(report)
                log.debug("epoch %d hr10=%.4f ndcg10=%.4f", epoch, report.hr10, report.ndcg10)
        return ExperimentResult(state.reports, audits, fallbacks, state, self.n_malicious)


def run_round(state: RoundState, dataset: InteractionDataset, config: FederationConfig,
              workers: int = 1) -> RoundState:
    return Federation(dataset, config, workers).run_round(state)[0]


def run_experiment(dataset: InteractionDataset, config: FederationConfig, workers: int = 1,
                   on_epoch: Callable[[EpochReport], None] | None = None) -> ExperimentResult:
    return Federation(dataset, config, workers).run(on_epoch=on_epoch)


METRICS = ("hr5", "ndcg5", "hr10", "ndcg10")


def drop_vs_clean(report: EpochReport, clean: dict) -> dict[str, float]:
    """Relative change ``(attacked - clean) / clean`` per metric."""
    out = {}
    for m in METRICS:
        base = float(clean[m])
        out[m] = (getattr(report, m) - base) / base if base else float("nan")
    return out
