import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapcal.intervals import (
    BoundedSample,
    CalibratedModel,
    Interval,
    OffsetFamily,
    StrengthenedFamily,
    calibrate,
    empirical_quantile,
    min_covering_t,
    predict,
    selection_coverage_bound,
    strengthen,
)

from helpers import synth_samples


class TestInterval:
    def test_normalizes_inverted_to_empty(self):
        itv = Interval(4.0, 3.0)
        assert itv.is_empty
        assert itv.width == 0.0
        assert not itv.contains(3.5)

    def test_width_and_containment(self):
        itv = Interval(-1.0, 2.0)
        assert itv.width == 3.0
        assert itv.contains(-1.0) and itv.contains(2.0)
        assert not itv.contains(2.0000001)

    def test_unbounded_endpoints(self):
        itv = Interval(-math.inf, math.inf)
        assert itv.contains(1e300)
        assert itv.width == math.inf

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            Interval(math.nan, 1.0)

    def test_intersect_produces_empty(self):
        assert Interval(0.0, 1.0).intersect(2.0, 3.0).is_empty


class TestStrengthen:
    def test_clips_both_ends(self):
        assert strengthen(Interval(-1.0, 5.0), 0.0, 3.0) == Interval(0.0, 3.0)

    def test_noop_when_contained(self):
        assert strengthen(Interval(1.0, 2.0), 0.0, 3.0) == Interval(1.0, 2.0)

    def test_disjoint_becomes_empty(self):
        assert strengthen(Interval(4.0, 5.0), 0.0, 3.0).is_empty

    def test_invalid_bound_pair(self):
        with pytest.raises(ValueError, match="invalid bound pair"):
            strengthen(Interval(0.0, 1.0), 2.0, 1.0)


class TestBoundedSample:
    def test_rejects_violation(self):
        with pytest.raises(ValueError, match="sandwich"):
            BoundedSample(y=5.0, b_lo=6.0, b_hi=7.0)

    def test_accepts_roundoff_and_restores_containment(self):
        s = BoundedSample(y=1.0 + 1e-12, b_lo=0.0, b_hi=1.0)
        assert s.b_lo <= s.y <= s.b_hi

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            BoundedSample(y=math.inf, b_lo=0.0, b_hi=1.0)

    def test_delta(self):
        assert BoundedSample(y=1.0, b_lo=0.5, b_hi=2.5).delta == 2.0


class TestEmpiricalQuantile:
    def test_maximum_order_statistic(self):
        assert empirical_quantile([3, 1, 2], 1.0) == 3

    def test_minimum_at_one_third(self):
        assert empirical_quantile([3, 1, 2], 1.0 / 3.0) == 1

    def test_median_rank(self):
        # k = ceil(0.5 * 3) = 2, sorted -> [1, 2, 3], second value
        assert empirical_quantile([3, 1, 2], 0.5) == 2

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="empty sample"):
            empirical_quantile([], 0.5)

    def test_beta_zero_gives_minimum(self):
        assert empirical_quantile([5.0, -2.0, 3.0], 0.0) == -2.0

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=30),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_beta(self, values, b1, b2):
        lo, hi = min(b1, b2), max(b1, b2)
        assert empirical_quantile(values, lo) <= empirical_quantile(values, hi)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariant(self, values, beta):
        shuffled = list(values)
        np.random.default_rng(0).shuffle(shuffled)
        assert empirical_quantile(values, beta) == empirical_quantile(shuffled, beta)


def _const_offset_family(lo: float, hi: float) -> OffsetFamily:
    return OffsetFamily(lambda s: (lo, hi))


class _HiddenClosedForm(OffsetFamily):
    """Same intervals as OffsetFamily but forces the bisection path."""

    def covering_t(self, sample):
        return None


class TestMinCoveringT:
    def test_above_upper_endpoint(self):
        s = BoundedSample(y=5.0, b_lo=0.0, b_hi=10.0)
        assert min_covering_t(_const_offset_family(2.0, 3.0), s) == 2.0

    def test_interior_point_negative(self):
        s = BoundedSample(y=2.5, b_lo=0.0, b_hi=10.0)
        assert min_covering_t(_const_offset_family(2.0, 3.0), s) == -0.5

    def test_bisection_matches_closed_form(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            lo = rng.uniform(-5, 5)
            hi = lo + rng.uniform(0, 5)
            y = rng.uniform(-10, 10)
            s = BoundedSample(y=y, b_lo=y - 20, b_hi=y + 20)
            exact = min_covering_t(_const_offset_family(lo, hi), s)
            approx = min_covering_t(_HiddenClosedForm(lambda _s: (lo, hi)), s)
            assert abs(exact - approx) < 1e-9

    def test_membership_inverse(self):
        # exact inverse up to 1-ulp rounding of L - (L - y); test at +-1e-9
        rng = np.random.default_rng(3)
        fam = _const_offset_family(1.0, 2.0)
        for _ in range(100):
            y = rng.uniform(-5, 8)
            s = BoundedSample(y=y, b_lo=y - 10, b_hi=y + 10)
            t_star = min_covering_t(fam, s)
            assert fam.interval(s, t_star + 1e-9).contains(y)
            assert not fam.interval(s, t_star - 1e-9).contains(y)

    def test_uncoverable_raises(self):
        class Bounded(OffsetFamily):
            t_max = 0.5

            def covering_t(self, sample):
                return None

        s = BoundedSample(y=9.0, b_lo=0.0, b_hi=10.0)
        with pytest.raises(ValueError, match="cannot cover"):
            min_covering_t(Bounded(lambda _s: (1.0, 2.0)), s)


def _samples_with_scores(scores) -> list[BoundedSample]:
    # With endpoints (0, 0) the covering score of y > 0 is exactly y.
    return [BoundedSample(y=float(v), b_lo=0.0, b_hi=10.0) for v in scores]


def _tau_oracle(scores, alpha) -> float:
    """Enumerate candidate thresholds: smallest score whose coverage count
    meets (1 - alpha) * (n + 1)."""
    n = len(scores)
    need = (1.0 - alpha) * (n + 1)
    for t in sorted(scores):
        if sum(1 for s in scores if s <= t) >= need - 1e-12:
            return t
    return math.inf


class TestCalibrate:
    def test_rank_rule_against_enumeration(self):
        scores = [0.1 * k for k in range(1, 10)]
        samples = _samples_with_scores(scores)
        fam = _const_offset_family(0.0, 0.0)
        model = calibrate(fam, samples, 0.5)
        assert model.tau == pytest.approx(0.5, abs=0)
        assert model.tau == _tau_oracle(scores, 0.5)

    def test_random_problems_match_enumeration(self):
        rng = np.random.default_rng(11)
        fam = _const_offset_family(0.0, 0.0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            alpha = float(rng.uniform(0.02, 0.6))
            scores = [float(v) for v in rng.uniform(0.01, 5.0, n)]
            model = calibrate(fam, _samples_with_scores(scores), alpha)
            assert model.tau == _tau_oracle(scores, alpha)

    def test_tied_scores(self):
        samples = _samples_with_scores([1.0] * 9)
        model = calibrate(_const_offset_family(0.0, 0.0), samples, 0.1)
        assert model.tau == 1.0

    def test_rank_exceeds_sample_size(self):
        samples = _samples_with_scores([0.5] * 4)
        model = calibrate(_const_offset_family(0.0, 0.0), samples, 0.1)
        assert model.tau == math.inf
        itv = predict(model, samples[0])
        assert itv == Interval(samples[0].b_lo, samples[0].b_hi)

    def test_empty_calibration_set(self):
        with pytest.raises(ValueError, match="empty sample"):
            calibrate(_const_offset_family(0.0, 0.0), [], 0.1)

    def test_calibration_coverage_identity(self):
        rng = np.random.default_rng(5)
        samples = synth_samples(rng, 80)
        for alpha in (0.05, 0.1, 0.3):
            fam = OffsetFamily(lambda s: (s.b_lo, s.b_hi))
            model = calibrate(fam, samples, alpha)
            n = len(samples)
            k = math.ceil((1 - alpha) * (n + 1))
            if k > n:
                continue
            covered = sum(
                1 for s in samples if predict(model, s).contains(s.y)
            )
            assert covered / n >= (1 - alpha) * (n + 1) / n - 1e-12


class TestPredict:
    def test_direct_evaluation(self):
        s = BoundedSample(y=1.5, b_lo=0.0, b_hi=10.0)
        model = CalibratedModel(_const_offset_family(1.0, 2.0), tau=0.5, alpha=0.1)
        assert predict(model, s) == Interval(0.5, 2.5)

    def test_strengthening_binds(self):
        s = BoundedSample(y=1.5, b_lo=1.0, b_hi=2.2)
        model = CalibratedModel(_const_offset_family(1.0, 2.0), tau=0.5, alpha=0.1)
        assert predict(model, s) == Interval(1.0, 2.2)


class TestNesting:
    @given(
        st.floats(-10, 10),
        st.floats(0, 5),
        st.floats(-3, 3),
        st.floats(0, 3),
    )
    @settings(max_examples=300, deadline=None)
    def test_offset_family_nests(self, lo, span, t, dt):
        fam = _const_offset_family(lo, lo + span)
        s = BoundedSample(y=lo + span / 2, b_lo=lo - 10, b_hi=lo + span + 10)
        inner = fam.interval(s, t)
        outer = fam.interval(s, t + dt)
        if not inner.is_empty:
            assert outer.lo <= inner.lo and inner.hi <= outer.hi

    def test_family_limits(self):
        fam = _const_offset_family(1.0, 2.0)
        s = BoundedSample(y=1.5, b_lo=0.0, b_hi=3.0)
        assert fam.interval(s, -math.inf).is_empty
        assert fam.interval(s, math.inf) == Interval(-math.inf, math.inf)


class TestStrengthenedCalibrationInvariance:
    def test_tau_and_predictions_identical(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(5, 40))
            samples = synth_samples(rng, n)
            shift_lo = float(rng.normal(0.0, 1.0))
            shift_hi = shift_lo + float(rng.uniform(0.0, 2.0))
            raw = OffsetFamily(lambda s, a=shift_lo, b=shift_hi: (s.b_lo + a, s.b_hi + b))
            pre = StrengthenedFamily(raw)
            alpha = float(rng.uniform(0.05, 0.5))
            m_raw = calibrate(raw, samples, alpha)
            m_pre = calibrate(pre, samples, alpha)
            assert m_raw.tau == m_pre.tau
            for s in samples[:5]:
                a = predict(m_raw, s)
                b = predict(m_pre, s)
                assert (a.lo, a.hi) == (b.lo, b.hi)


class TestSelectionCoverageBound:
    def test_eta_value_high_precision(self):
        getcontext().prec = 40
        eta_fast = math.sqrt(math.log(8.0) / 2.0) + 1.0 / 3.0
        eta_slow = float((Decimal(8).ln() / 2).sqrt() + Decimal(1) / Decimal(3))
        assert abs(eta_fast - eta_slow) < 1e-12

    def test_value_at_100_and_alpha_01(self):
        got = selection_coverage_bound(100, 0.1)
        eta = math.sqrt(math.log(8.0) / 2.0) + 1.0 / 3.0
        expected = (101 / 100) * 0.9 - eta / 10.0
        assert got == pytest.approx(expected, abs=1e-12)
        getcontext().prec = 40
        eta_d = (Decimal(8).ln() / 2).sqrt() + Decimal(1) / Decimal(3)
        expected_d = Decimal(101) / 100 * Decimal("0.9") - eta_d / Decimal(100).sqrt()
        assert got == pytest.approx(float(expected_d), abs=1e-12)

    def test_limit_is_one_minus_alpha(self):
        assert selection_coverage_bound(10**12, 0.2) == pytest.approx(0.8, abs=1e-5)

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            selection_coverage_bound(0, 0.1)
