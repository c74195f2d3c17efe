"""Intervals, empirical quantiles, and rank calibration of nested families.

This is the statistical kernel every interval method in the package builds
on. A method supplies a family of nested intervals ``t -> C_t(x)``; for each
calibration sample we compute the smallest ``t`` whose interval covers the
label, and the calibrated threshold ``tau`` is an upper order statistic of
those scores. Under exchangeability the resulting intervals have
finite-sample marginal coverage.

Predictions are always intersected with the per-sample certified bounds
``[b_lo, b_hi]`` ("strengthening"). Labels lie inside those bounds by
construction, so strengthening never costs coverage, and calibrating the raw
family is equivalent to calibrating the pre-strengthened one; the test suite
checks that equivalence exactly instead of assuming it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

__all__ = [
    "Interval",
    "EMPTY_INTERVAL",
    "FULL_LINE",
    "BoundedSample",
    "NestedFamily",
    "OffsetFamily",
    "StrengthenedFamily",
    "CalibratedModel",
    "empirical_quantile",
    "min_covering_t",
    "calibrate",
    "strengthen",
    "predict",
    "selection_coverage_bound",
]

# Guards ceil/floor of rank products like (1 - alpha) * (n + 1) against float
# representation error; products that are integers in exact arithmetic must
# not round to the neighbouring rank.
_RANK_EPS = 1e-9

# Bound pairs from LP solves can miss the label by solver roundoff; anything
# worse than this relative slack is treated as invalid data.
_VALIDITY_SLACK = 1e-8


def ceil_rank(q: float) -> int:
    return math.ceil(q - _RANK_EPS)


def floor_rank(q: float) -> int:
    return math.floor(q + _RANK_EPS)


@dataclass(frozen=True)
class Interval:
    """Closed real interval; ``lo > hi`` normalizes to the empty interval.

    Endpoints may be infinite so a family can return the whole line before
    strengthening clips it. The empty interval is canonical (+inf, -inf),
    has width exactly 0, and contains nothing.
    """

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo = float(self.lo)
        hi = float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            lo, hi = math.inf, -math.inf
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def width(self) -> float:
        return 0.0 if self.lo > self.hi else self.hi - self.lo

    def contains(self, y: float) -> bool:
        return self.lo <= y <= self.hi

    def intersect(self, lo: float, hi: float) -> "Interval":
        return Interval(max(self.lo, lo), min(self.hi, hi))


EMPTY_INTERVAL = Interval(math.inf, -math.inf)
FULL_LINE = Interval(-math.inf, math.inf)


@dataclass(frozen=True)
class BoundedSample:
    """One record: features, true optimum y, and a certified bound pair.

    Validity (b_lo <= y <= b_hi) is checked at construction with 1e-8
    relative slack for solver roundoff; the bounds are then widened by the
    observed roundoff (at most that slack) so that containment holds exactly
    for all downstream arithmetic.
    """

    y: float
    b_lo: float
    b_hi: float
    features: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        y, b_lo, b_hi = float(self.y), float(self.b_lo), float(self.b_hi)
        if not (math.isfinite(y) and math.isfinite(b_lo) and math.isfinite(b_hi)):
            raise ValueError("sample values must be finite")
        slack = _VALIDITY_SLACK * max(1.0, abs(y), abs(b_lo), abs(b_hi))
        if b_lo - slack > y or y > b_hi + slack:
            raise ValueError(
                f"bounds do not sandwich the label: {b_lo} <= {y} <= {b_hi} fails"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "b_lo", min(b_lo, y))
        object.__setattr__(self, "b_hi", max(b_hi, y))
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))

    @property
    def delta(self) -> float:
        """Width of the certified bound pair."""
        return self.b_hi - self.b_lo


class NestedFamily:
    """A monotone family of intervals ``t -> C_t(x)``.

    Contract: for t <= t', C_t(x) is contained in C_t'(x); the bottom of the
    parameter domain gives the empty interval and the top the full line
    (degenerate bound pairs may collapse to a point instead). Subclasses may
    provide the smallest covering t in closed form via ``covering_t``;
    ``min_covering_t`` falls back to bisection otherwise.
    """

    t_min: float = -math.inf
    t_max: float = math.inf

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        raise NotImplementedError

    def covering_t(self, sample: BoundedSample) -> Optional[float]:
        return None


class OffsetFamily(NestedFamily):
    """``C_t(x) = [L(x) - t, U(x) + t]`` for per-sample endpoints (L, U).

    The parameter domain is the whole real line: far enough negative t gives
    the empty interval, far enough positive t the full line. L > U is
    allowed; the family is then empty until t reaches (L - U) / 2.
    """

    def __init__(self, endpoints: Callable[[BoundedSample], tuple[float, float]]):
        self.endpoints = endpoints

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        lo, hi = self.endpoints(sample)
        return Interval(lo - t, hi + t)

    def covering_t(self, sample: BoundedSample) -> float:
        lo, hi = self.endpoints(sample)
        return max(lo - sample.y, sample.y - hi)


class StrengthenedFamily(NestedFamily):
    """A family intersected with the certified bounds at every t.

    Because labels sit inside their bounds, a sample's covering score is the
    same as under the raw family; a label outside the bounds (impossible for
    validated samples) could never be covered.
    """

    def __init__(self, inner: NestedFamily):
        self.inner = inner
        self.t_min = inner.t_min
        self.t_max = inner.t_max

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        return self.inner.interval(sample, t).intersect(sample.b_lo, sample.b_hi)

    def covering_t(self, sample: BoundedSample) -> Optional[float]:
        if not (sample.b_lo <= sample.y <= sample.b_hi):
            return math.inf
        return self.inner.covering_t(sample)


def empirical_quantile(values: Sequence[float], beta: float) -> float:
    """Ceiling-rank order statistic: the k-th smallest with k = max(1, ceil(beta*n)).

    No interpolation, so results are deterministic and exactly testable.
    """
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("empty sample")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    k = max(1, ceil_rank(beta * len(vals)))
    return vals[min(k, len(vals)) - 1]


def min_covering_t(
    family: NestedFamily, sample: BoundedSample, *, tol: Optional[float] = None
) -> float:
    """Smallest t such that the sample's label lies in C_t.

    Uses the family's closed form when available; otherwise bisects over the
    parameter domain to absolute tolerance 1e-12 * max(1, |y|). By nesting,
    membership is monotone in t, so this value is the exact inverse of
    membership: y in C_t iff t >= min_covering_t.
    """
    closed = family.covering_t(sample)
    if closed is not None:
        return closed
    y = sample.y
    if tol is None:
        tol = 1e-12 * max(1.0, abs(y))

    def covered(t: float) -> bool:
        return family.interval(sample, t).contains(y)

    hi = family.t_max
    if not math.isfinite(hi):
        hi = max(1.0, abs(y))
        for _ in range(200):
            if covered(hi):
                break
            hi *= 2.0
        else:
            raise ValueError("family cannot cover sample")
    elif not covered(hi):
        raise ValueError("family cannot cover sample")

    lo = family.t_min
    if not math.isfinite(lo):
        lo = -max(1.0, abs(y))
        for _ in range(200):
            if not covered(lo):
                break
            lo *= 2.0
        else:
            # covered at every probed t; the infimum is unbounded below
            return -math.inf
    elif covered(lo):
        return lo

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if covered(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class CalibratedModel:
    """A nested family frozen at its calibrated threshold."""

    family: NestedFamily
    tau: float
    alpha: float
    strengthen_flag: bool = True

    def predict_interval(self, sample: BoundedSample) -> Interval:
        return predict(self, sample)


def calibrate(
    family: NestedFamily, cal_set: Sequence[BoundedSample], alpha: float
) -> CalibratedModel:
    """Rank-calibrate a nested family at miscoverage level alpha.

    With N calibration scores, tau is the k-th smallest score where
    k = ceil((1 - alpha) * (N + 1)). The coverage count is a step function of
    t, so this order statistic equals the infimum over thresholds whose
    calibration coverage count reaches (1 - alpha) * (N + 1). If k exceeds N
    the requested level cannot be certified and tau = sup(T): predictions
    collapse to the certified bounds once strengthened.
    """
    samples = list(cal_set)
    if not samples:
        raise ValueError("empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    n = len(samples)
    k = max(1, ceil_rank((1.0 - alpha) * (n + 1)))
    if k > n:
        tau = family.t_max
    else:
        scores = sorted(min_covering_t(family, s) for s in samples)
        tau = scores[k - 1]
    return CalibratedModel(family=family, tau=tau, alpha=alpha)


def strengthen(interval: Interval, b_lo: float, b_hi: float) -> Interval:
    """Intersect a prediction with the certified bound pair."""
    if b_lo > b_hi:
        raise ValueError("invalid bound pair")
    return interval.intersect(b_lo, b_hi)


def predict(model: CalibratedModel, sample: BoundedSample) -> Interval:
    """Evaluate the calibrated family and clip to the certified bounds."""
    itv = model.family.interval(sample, model.tau)
    if model.strengthen_flag:
        itv = strengthen(itv, sample.b_lo, sample.b_hi)
    return itv


def selection_coverage_bound(n_cal: int, alpha: float) -> float:
    """Coverage floor after width-based selection among calibrated families.

    Returns (1 + n) / n * (1 - alpha) - eta / sqrt(n) with
    eta = sqrt(ln(8) / 2) + 1/3. The correction terms vanish as n grows, so
    the bound tends to 1 - alpha from below.
    """
    if n_cal < 1:
        raise ValueError("n_cal must be >= 1")
    eta = math.sqrt(math.log(8.0) / 2.0) + 1.0 / 3.0
    return (1.0 + n_cal) / n_cal * (1.0 - alpha) - eta / math.sqrt(n_cal)
