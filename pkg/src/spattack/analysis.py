"""Degree power-law fitting and the degree-threshold breakdown analysis.

An item with ``d`` benign uploads is lost to ``k`` colluding clients once
``k / (d + k)`` exceeds the aggregator's breakdown point ``alpha``, i.e.
when ``d < k * (1 - alpha) / alpha``. Under a continuous power law the share
of such items is ``1 - C / (beta - 1) * threshold ** (1 - beta)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .aggregation import AggregatorSpec, SparseRoundUpdate, sparse_aggregate


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    normalization: float
    x_min: float
    n_samples: int

    def survival(self, x: float) -> float:
        """``P(X > x)`` of the fitted density (1 below ``x_min``)."""
        if x <= self.x_min:
            return 1.0
        return self.normalization / (self.exponent - 1) * x ** (1 - self.exponent)


@dataclass(frozen=True)
class BreakdownQuery:
    breakdown_point: float = 0.5
    malicious_count: int = 0

    def __post_init__(self):
        if not 0 < self.breakdown_point <= 0.5:
            raise ValueError("breakdown_point must be in (0, 0.5]")
        if self.malicious_count < 0:
            raise ValueError("malicious_count must be >= 0")

    @property
    def threshold(self) -> float:
        a = self.breakdown_point
        return (1 - a) / a * self.malicious_count


def fit_power_law(degrees, x_min: float = 1.0, min_samples: int = 10) -> PowerLawFit:
    """Continuous maximum-likelihood fit over degrees ``>= x_min``."""
    x = np.asarray(degrees, dtype=float)
    x = x[np.isfinite(x) & (x >= x_min) & (x > 0)]
    if len(x) < min_samples:
        raise FitError(f"need at least {min_samples} degrees >= {x_min}, got {len(x)}")
    log_sum = float(np.log(x / x_min).sum())
    if log_sum <= 0 or np.all(x == x[0]):
        raise FitError("degenerate degrees: exponent undefined")
    beta = 1.0 + len(x) / log_sum
    return PowerLawFit(beta, (beta - 1.0) * x_min ** (beta - 1.0), float(x_min), len(x))


def predicted_breakdown_fraction(fit: PowerLawFit, query: BreakdownQuery) -> float:
    if query.malicious_count == 0:
        return 0.0
    b, c = fit.exponent, fit.normalization
    value = 1.0 - c / (b - 1.0) * query.threshold ** (1.0 - b)
    return float(min(1.0, max(0.0, value)))


def empirical_breakdown_fraction(degrees, query: BreakdownQuery) -> float:
    """Share of items with degree strictly below the breakdown threshold."""
    d = np.asarray(degrees, dtype=float)
    if d.size == 0:
        raise ValueError("degrees must be non-empty")
    return float(np.count_nonzero(d < query.threshold) / d.size)


def breakdown_table(degrees, breakdown_points: Iterable[float], malicious_counts: Iterable[int],
                    fit: PowerLawFit | None = None) -> list[tuple[float, int, float, float]]:
    """Rows of ``(alpha, n_malicious, predicted, empirical)``."""
    if fit is None:
        fit = fit_power_law(degrees)
    rows = []
    for a in breakdown_points:
        for k in malicious_counts:
            q = BreakdownQuery(a, k)
            rows.append((a, k, predicted_breakdown_fraction(fit, q),
                         empirical_breakdown_fraction(degrees, q)))
    return rows


def sample_power_law(n: int, exponent: float, rng: np.random.Generator,
                     x_min: float = 1.0) -> np.ndarray:
    """Inverse-CDF draws from the continuous power law on ``[x_min, inf)``."""
    u = rng.random(n)
    return x_min * (1.0 - u) ** (-1.0 / (exponent - 1.0))


def malicious_direction_fraction(benign: SparseRoundUpdate, malicious: SparseRoundUpdate,
                                 spec: AggregatorSpec) -> float:
    """Share of attacked items whose aggregated step opposes the benign-only step.

    The benign-only step for an item is its benign mean; an item counts as
    moved in the malicious direction when the aggregate over benign plus
    malicious uploads has a negative inner product with it.
    """
    attacked = np.unique(malicious.items)
    if len(attacked) == 0:
        return 0.0
    b_items, b_sums, b_counts = benign.item_sums()
    items, agg, _ = sparse_aggregate(benign.merge(malicious), spec)
    keep = np.isin(b_items, attacked)
    b_items, b_mean = b_items[keep], b_sums[keep] / b_counts[keep, None]
    rows = np.searchsorted(items, b_items)
    flipped = np.einsum("ij,ij->i", agg[rows], b_mean) < 0
    return float(flipped.mean()) if len(flipped) else 0.0
