import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spattack import attacks as atk
from spattack.aggregation import AggregatorSpec, SparseRoundUpdate
from spattack.analysis import (BreakdownQuery, FitError, PowerLawFit, breakdown_table,
                               empirical_breakdown_fraction, fit_power_law,
                               malicious_direction_fraction, predicted_breakdown_fraction,
                               sample_power_law)


def test_fit_rejects_degenerate():
    with pytest.raises(FitError):
        fit_power_law(np.full(50, 4))
    with pytest.raises(FitError):
        fit_power_law(np.ones(50))
    with pytest.raises(FitError):
        fit_power_law([2, 3, 4])


def test_fit_recovers_exponent():
    x = sample_power_law(100_000, 2.5, np.random.default_rng(0))
    fit = fit_power_law(x)
    assert abs(fit.exponent - 2.5) <= 0.05
    area, _ = integrate.quad(lambda t: fit.normalization * t ** -fit.exponent, fit.x_min, np.inf)
    assert area == pytest.approx(1.0, abs=1e-9)


def test_normalization_closed_form():
    fit = fit_power_law(sample_power_law(1000, 1.8, np.random.default_rng(1), x_min=2.0),
                        x_min=2.0)
    b = fit.exponent
    assert fit.normalization == pytest.approx((b - 1) * 2.0 ** (b - 1), rel=1e-15)
    assert fit.survival(2.0) == pytest.approx(1.0)


def test_predicted_examples():
    fit = PowerLawFit(2.0, 1.0, 1.0, 100)
    assert predicted_breakdown_fraction(fit, BreakdownQuery(0.5, 0)) == 0
    assert predicted_breakdown_fraction(fit, BreakdownQuery(0.5, 10)) == pytest.approx(0.9)


def test_empirical_examples():
    assert empirical_breakdown_fraction([1, 1, 5, 300], BreakdownQuery(0.5, 10)) == 0.75
    assert empirical_breakdown_fraction([1, 2, 3], BreakdownQuery(0.5, 0)) == 0
    # strict: degree equal to the threshold is not broken
    assert empirical_breakdown_fraction([10, 9], BreakdownQuery(0.5, 10)) == 0.5
    with pytest.raises(ValueError):
        empirical_breakdown_fraction([], BreakdownQuery(0.5, 1))


def test_query_validation():
    for a in (0.0, 0.6):
        with pytest.raises(ValueError):
            BreakdownQuery(a, 1)
    with pytest.raises(ValueError):
        BreakdownQuery(0.5, -1)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.01, 6), st.floats(1e-3, 50), st.floats(0.01, 0.5), st.integers(0, 10_000))
def test_prediction_clamped(beta, c, alpha, n):
    p = predicted_breakdown_fraction(PowerLawFit(beta, c, 1.0, 10), BreakdownQuery(alpha, n))
    assert 0.0 <= p <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1.1, 4), st.integers(1, 500), st.integers(0, 500),
       st.floats(0.05, 0.5), st.floats(0.0, 0.45))
def test_monotone_in_count_and_alpha(beta, n, extra, alpha, d_alpha):
    fit = PowerLawFit(beta, beta - 1, 1.0, 10)
    degrees = np.arange(1, 400)
    lo, hi = BreakdownQuery(alpha, n), BreakdownQuery(alpha, n + extra)
    assert predicted_breakdown_fraction(fit, hi) >= predicted_breakdown_fraction(fit, lo)
    assert empirical_breakdown_fraction(degrees, hi) >= empirical_breakdown_fraction(degrees, lo)
    a2 = min(0.5, alpha + d_alpha)
    weak, strong = BreakdownQuery(alpha, n), BreakdownQuery(a2, n)
    assert predicted_breakdown_fraction(fit, strong) <= predicted_breakdown_fraction(fit, weak)
    assert empirical_breakdown_fraction(degrees, strong) <= empirical_breakdown_fraction(degrees, weak)


def test_breakdown_table_rows():
    x = sample_power_law(5000, 2.5, np.random.default_rng(2))
    rows = breakdown_table(x, [0.5, 0.25], [10, 100])
    assert [(r[0], r[1]) for r in rows] == [(0.5, 10), (0.5, 100), (0.25, 10), (0.25, 100)]
    assert all(len(r) == 4 for r in rows)


def test_direction_fraction():
    benign = SparseRoundUpdate.from_mapping({
        0: [(0, np.array([1.0])), (1, np.array([1.2])), (2, np.array([0.8]))],
        1: [(c, np.array([1.0 + 0.1 * c])) for c in range(9)],
    }, 1)
    mal = atk.spattack_od(benign, 5, 100)
    # item 0 has 3 benign vs 5 malicious uploads, item 1 has 9 vs 5
    assert malicious_direction_fraction(benign, mal, AggregatorSpec("median")) == 0.5
    assert malicious_direction_fraction(benign, SparseRoundUpdate.empty(1),
                                        AggregatorSpec("median")) == 0.0
