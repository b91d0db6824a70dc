"""Experiment configuration: a JSON object validated into typed blocks."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import attacks as atk
from .aggregation import KINDS as AGGREGATOR_KINDS
from .aggregation import AggregatorSpec
from .dataset import InteractionDataset, SyntheticSpec, generate_synthetic, load_movielens
from .federation import ConfigError, FederationConfig


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SyntheticBlock(_Block):
    n_users: int = Field(1000, ge=1)
    n_items: int = Field(2000, ge=2)
    interactions_per_user: int = Field(20, ge=1)
    exponent: float = Field(1.5, gt=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _fits(self):
        if self.interactions_per_user >= self.n_items:
            raise ValueError("interactions_per_user must be < n_items")
        return self


class DatasetBlock(_Block):
    source: Literal["ml100k", "path", "synthetic"] = "ml100k"
    path: Optional[str] = None
    name: Optional[str] = None
    synthetic: SyntheticBlock = Field(default_factory=SyntheticBlock)

    @model_validator(mode="after")
    def _needs_path(self):
        if self.source == "path" and not self.path:
            raise ValueError("source 'path' requires dataset.path")
        return self


class ModelBlock(_Block):
    dim: int = Field(32, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    init_std: float = Field(0.01, ge=0)


class FederationBlock(_Block):
    epochs: int = Field(200, ge=1)
    eval_every: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    negatives_per_positive: int = Field(1, ge=1)
    eval_negatives: int = Field(100, ge=1)
    divergence_threshold: float = Field(1e6, gt=0)


class AggregatorBlock(_Block):
    kind: Literal[AGGREGATOR_KINDS] = "mean"  # type: ignore[valid-type]
    trim_count: Optional[int] = Field(None, ge=0, description="defaults to the malicious count")
    assumed_byzantine: Optional[int] = Field(None, ge=0,
                                             description="defaults to the malicious count")
    clip_threshold: float = Field(0.5, gt=0)


class AttackBlock(_Block):
    kind: Literal[atk.KINDS] = "none"  # type: ignore[valid-type]
    malicious_ratio: float = Field(0.0, ge=0, lt=1)
    malicious_count: Optional[int] = Field(None, ge=0)
    count_table: Optional[Literal[tuple(atk.PUBLISHED_COUNTS)]] = None  # type: ignore[valid-type]
    start_epoch: int = Field(0, ge=0)
    max_poisoned_items: Optional[int] = Field(None, ge=1)
    noise_std: float = Field(1.0, ge=0)
    lie_scale: float = Field(0.1, ge=0)
    lie_direction: Literal[-1, 1] = 1
    fang_scale_range: tuple[float, float] = (3.0, 4.0)
    os_divisor: Literal["per_item", "global"] = "per_item"

    @model_validator(mode="after")
    def _range(self):
        lo, hi = self.fang_scale_range
        if not 0 <= lo <= hi:
            raise ValueError("fang_scale_range must satisfy 0 <= low <= high")
        return self


class OutputBlock(_Block):
    directory: str = "runs"
    label: str = "run"
    plot_data: bool = False


class ExperimentConfig(_Block):
    dataset: DatasetBlock = Field(default_factory=DatasetBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    federation: FederationBlock = Field(default_factory=FederationBlock)
    aggregator: AggregatorBlock = Field(default_factory=AggregatorBlock)
    attack: AttackBlock = Field(default_factory=AttackBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(source) -> ExperimentConfig:
    """Validate a config from a dict, JSON text or a path to a JSON file.

    Raises:
        ConfigError: naming the dotted key path of every offending field.
    """
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            source = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if isinstance(source, str):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(source, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(source)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def load_dataset(block: DatasetBlock) -> InteractionDataset:
    if block.source == "synthetic":
        s = block.synthetic
        return generate_synthetic(SyntheticSpec(s.n_users, s.n_items, s.interactions_per_user,
                                                s.exponent, s.seed))
    if block.source == "path":
        return load_movielens(block.path, block.name or Path(block.path).stem)
    from .fetch import fetch_ml100k
    return load_movielens(fetch_ml100k(), block.name or "ml100k")


def resolve_malicious_count(attack: AttackBlock, n_benign: int) -> tuple[int, bool]:
    """Malicious count and whether it comes from a published table."""
    if attack.kind == atk.NONE:
        return 0, False
    if attack.malicious_count is not None:
        return attack.malicious_count, False
    table = atk.PUBLISHED_COUNTS.get(attack.count_table) if attack.count_table else None
    count = atk.plan_malicious_count(n_benign, attack.malicious_ratio, table)
    return count, table is not None and count != atk.plan_malicious_count(n_benign,
                                                                          attack.malicious_ratio)


def build_federation_config(cfg: ExperimentConfig,
                            dataset: InteractionDataset) -> FederationConfig:
    a, g = cfg.attack, cfg.aggregator
    count, overridden = resolve_malicious_count(a, dataset.n_users)
    plan = atk.AttackPlan(
        kind=a.kind, malicious_count=count, malicious_ratio=a.malicious_ratio,
        start_epoch=a.start_epoch, max_poisoned_items=a.max_poisoned_items,
        noise_std=a.noise_std, lie_scale=a.lie_scale, lie_direction=a.lie_direction,
        fang_scale_range=tuple(a.fang_scale_range), os_divisor=a.os_divisor,
        seed=cfg.federation.seed, count_overridden=overridden)
    try:
        plan.validate(dataset.n_users)
    except ValueError as exc:
        raise ConfigError(f"attack: {exc}") from exc
    spec = AggregatorSpec(
        kind=g.kind,
        trim_count=count if g.trim_count is None else g.trim_count,
        assumed_byzantine=count if g.assumed_byzantine is None else g.assumed_byzantine,
        clip_threshold=g.clip_threshold)
    f, m = cfg.federation, cfg.model
    return FederationConfig(
        epochs=f.epochs, eval_every=f.eval_every, aggregator=spec, attack=plan, dim=m.dim,
        learning_rate=m.learning_rate, init_std=m.init_std, seed=f.seed,
        negatives_per_positive=f.negatives_per_positive, eval_negatives=f.eval_negatives,
        divergence_threshold=f.divergence_threshold)


def resolved_settings(fed: FederationConfig) -> dict:
    """Values that were derived from the config rather than written in it."""
    plan, spec = fed.attack, fed.aggregator
    return {
        "malicious_count": plan.malicious_count if plan.active else 0,
        "count_overridden": plan.count_overridden,
        "max_poisoned_items": plan.max_poisoned_items,
        "trim_count": spec.trim_count,
        "assumed_byzantine": spec.assumed_byzantine,
    }
