"""Interval-construction methods on top of certified bound pairs.

Baselines: two-sided split conformal on either bound model, conformalized
quantile regression with the bounds standing in for quantile estimates
("cqr"), its width-rescaled variant ("cqr-r"), and a single-family
construction anchored on both bounds ("sfd").

The main method ("cpul") shifts each bound by training-set residual
quantiles, combines the shifted endpoints into four nested families,
calibrates each, and keeps the family with the smallest mean width on the
calibration set. Its refinement ("cpul-omlt") additionally floors interval
widths at a threshold tuned on a reserved calibration slice, which prevents
calibration from shrinking intervals to nothing exactly where the bounds are
tightest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .intervals import (
    BoundedSample,
    CalibratedModel,
    Interval,
    NestedFamily,
    OffsetFamily,
    StrengthenedFamily,
    calibrate,
    ceil_rank,
    empirical_quantile,
    floor_rank,
)

__all__ = [
    "CPUL_VARIANTS",
    "METHOD_NAMES",
    "ResidualQuantiles",
    "CpulModel",
    "OmltModel",
    "WidthScaledFamily",
    "MinLengthFamily",
    "SketchCountFamily",
    "cpul_residual_quantiles",
    "variant_family",
    "split_cp_fit",
    "cqr_fit",
    "cqr_r_fit",
    "sfd_fit",
    "cpul_fit",
    "omlt_wrap",
    "omlt_fit",
    "default_ell_grid",
    "method_predict",
    "fit_method",
    "mean_predicted_width",
]

# Endpoint combinations, in tie-break order: first letter picks the anchor of
# the lower endpoint (l -> b_lo, u -> b_hi), second letter the upper one.
CPUL_VARIANTS = ("ll", "lu", "ul", "uu")

METHOD_NAMES = ("split-cp-l", "split-cp-u", "sfd", "cqr", "cqr-r", "cpul", "cpul-omlt")


@dataclass(frozen=True)
class ResidualQuantiles:
    """Training-set quantiles of the signed residuals against each bound.

    q_l_* come from y - b_lo (nonnegative on valid data), q_u_* from
    y - b_hi (nonpositive); *_lo is the alpha/2 quantile and *_hi the
    1 - alpha/2 quantile.
    """

    q_l_lo: float
    q_l_hi: float
    q_u_lo: float
    q_u_hi: float
    alpha: float

    def __post_init__(self) -> None:
        if self.q_l_lo > self.q_l_hi or self.q_u_lo > self.q_u_hi:
            raise ValueError("residual quantiles out of order")
        if self.q_l_lo < 0.0 or self.q_u_hi > 0.0:
            raise ValueError("residual quantiles have impossible signs for valid bounds")


def cpul_residual_quantiles(
    train_set: Sequence[BoundedSample], alpha: float
) -> ResidualQuantiles:
    """Quantiles of y - b_lo and y - b_hi at levels alpha/2 and 1 - alpha/2."""
    samples = list(train_set)
    if not samples:
        raise ValueError("empty training set")
    r_lo = [s.y - s.b_lo for s in samples]
    r_hi = [s.y - s.b_hi for s in samples]
    return ResidualQuantiles(
        q_l_lo=empirical_quantile(r_lo, alpha / 2.0),
        q_l_hi=empirical_quantile(r_lo, 1.0 - alpha / 2.0),
        q_u_lo=empirical_quantile(r_hi, alpha / 2.0),
        q_u_hi=empirical_quantile(r_hi, 1.0 - alpha / 2.0),
        alpha=alpha,
    )


def variant_family(quantiles: ResidualQuantiles, tag: str) -> OffsetFamily:
    """Offset family for one endpoint combination.

    The lower endpoint is the chosen bound shifted by its low residual
    quantile, the upper endpoint the chosen bound shifted by its high
    quantile; the family then widens both ends by t.
    """
    if tag not in CPUL_VARIANTS:
        raise ValueError(f"unknown variant {tag!r}")
    q = quantiles
    lower_on_lo = tag[0] == "l"
    upper_on_lo = tag[1] == "l"

    def endpoints(s: BoundedSample) -> tuple[float, float]:
        lo = s.b_lo + q.q_l_lo if lower_on_lo else s.b_hi + q.q_u_lo
        hi = s.b_lo + q.q_l_hi if upper_on_lo else s.b_hi + q.q_u_hi
        return lo, hi

    return OffsetFamily(endpoints)


def mean_predicted_width(model: CalibratedModel, samples: Sequence[BoundedSample]) -> float:
    """Mean strengthened interval width over a sample set (unnormalized)."""
    if not samples:
        raise ValueError("empty sample set")
    return sum(model.predict_interval(s).width for s in samples) / len(samples)


@dataclass(frozen=True)
class CpulModel:
    """Four calibrated endpoint combinations plus the width-based selection.

    selected is the argmin of per_variant_mean_width with deterministic ties:
    earlier tags in CPUL_VARIANTS win.
    """

    quantiles: ResidualQuantiles
    selected: str
    per_variant_tau: Mapping[str, float]
    per_variant_mean_width: Mapping[str, float]
    models: Mapping[str, CalibratedModel]
    alpha: float

    def predict_interval(self, sample: BoundedSample) -> Interval:
        return self.models[self.selected].predict_interval(sample)


def _fit_variant_families(
    quantiles: ResidualQuantiles,
    families: Mapping[str, NestedFamily],
    cal_set: Sequence[BoundedSample],
    alpha: float,
) -> CpulModel:
    models: dict[str, CalibratedModel] = {}
    taus: dict[str, float] = {}
    widths: dict[str, float] = {}
    for tag in CPUL_VARIANTS:
        model = calibrate(families[tag], cal_set, alpha)
        models[tag] = model
        taus[tag] = model.tau
        widths[tag] = mean_predicted_width(model, cal_set)
    # min() keeps the first minimum, which is the declared tie-break order
    selected = min(CPUL_VARIANTS, key=widths.__getitem__)
    return CpulModel(
        quantiles=quantiles,
        selected=selected,
        per_variant_tau=taus,
        per_variant_mean_width=widths,
        models=models,
        alpha=alpha,
    )


def cpul_fit(
    train_set: Sequence[BoundedSample],
    cal_set: Sequence[BoundedSample],
    alpha: float,
) -> CpulModel:
    """Fit the four bound-anchored families and select by calibration width."""
    quantiles = cpul_residual_quantiles(train_set, alpha)
    families = {tag: variant_family(quantiles, tag) for tag in CPUL_VARIANTS}
    return _fit_variant_families(quantiles, families, cal_set, alpha)


def split_cp_fit(
    base: str, cal_set: Sequence[BoundedSample], alpha: float
) -> CalibratedModel:
    """Two-sided split conformal on the signed residuals of one bound model.

    base selects the point predictor: "lower" uses b_lo, "upper" uses b_hi.
    The interval is [B(x) + r_(k_lo), B(x) + r_(k_hi)] with ranks
    k_lo = floor((alpha/2)(N+1)) and k_hi = ceil((1-alpha/2)(N+1)); a rank
    outside 1..N leaves that side unbounded until strengthening clips it.
    """
    if base not in ("lower", "upper"):
        raise ValueError(f"base must be 'lower' or 'upper', got {base!r}")
    samples = list(cal_set)
    if not samples:
        raise ValueError("empty calibration set")
    use_lower = base == "lower"
    residuals = sorted(
        (s.y - s.b_lo) if use_lower else (s.y - s.b_hi) for s in samples
    )
    n = len(residuals)
    k_lo = floor_rank((alpha / 2.0) * (n + 1))
    k_hi = ceil_rank((1.0 - alpha / 2.0) * (n + 1))
    offset_lo = -math.inf if k_lo < 1 else residuals[k_lo - 1]
    offset_hi = math.inf if k_hi > n else residuals[k_hi - 1]

    def endpoints(s: BoundedSample) -> tuple[float, float]:
        b = s.b_lo if use_lower else s.b_hi
        return b + offset_lo, b + offset_hi

    return CalibratedModel(family=OffsetFamily(endpoints), tau=0.0, alpha=alpha)


def cqr_fit(cal_set: Sequence[BoundedSample], alpha: float) -> CalibratedModel:
    """Conformalize [b_lo - t, b_hi + t].

    Scores max(b_lo - y, y - b_hi) are never positive on valid data, so the
    calibrated tau is <= 0 and the interval only shrinks inside the certified
    bounds; strengthening never binds.
    """
    return calibrate(OffsetFamily(lambda s: (s.b_lo, s.b_hi)), cal_set, alpha)


class WidthScaledFamily(NestedFamily):
    """[b_lo - t*delta(x), b_hi + t*delta(x)] with delta(x) = b_hi - b_lo.

    Degenerate bound pairs (delta = 0) stay a single point for every t and
    score 0 by convention.
    """

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        delta = sample.delta
        if delta <= 0.0:
            return Interval(sample.b_lo, sample.b_lo)
        return Interval(sample.b_lo - t * delta, sample.b_hi + t * delta)

    def covering_t(self, sample: BoundedSample) -> float:
        delta = sample.delta
        if delta <= 0.0:
            return 0.0
        return max(sample.b_lo - sample.y, sample.y - sample.b_hi) / delta


def cqr_r_fit(cal_set: Sequence[BoundedSample], alpha: float) -> CalibratedModel:
    """Width-rescaled variant of cqr_fit.

    The offset is proportional to the certified width, softening the uniform
    shrinkage of cqr where the bounds are already tight.
    """
    return calibrate(WidthScaledFamily(), cal_set, alpha)


def sfd_fit(
    train_set: Sequence[BoundedSample],
    cal_set: Sequence[BoundedSample],
    alpha: float,
) -> CalibratedModel:
    """Calibrate the "ul" endpoint combination standalone (no selection).

    Lower endpoint anchored on b_hi, upper endpoint on b_lo, each shifted by
    its training residual quantile: the crossed construction that adapts to
    the certified width by design.
    """
    quantiles = cpul_residual_quantiles(train_set, alpha)
    return calibrate(variant_family(quantiles, "ul"), cal_set, alpha)


class SketchCountFamily(NestedFamily):
    """Reference construction for count-sketch frequency intervals.

    C_t(x) = [max(0, b_hi - t), min(b_hi, t)]: the lower bound is hardcoded
    to zero, as appropriate when the target is a nonnegative count with only
    an upper sketch bound. Kept as documentation of the construction the
    "sfd" method is adapted from; the benchmark methods never use it because
    dispatch objectives come with informative lower bounds. The top of the
    family is [0, b_hi] rather than the full line.
    """

    t_min = 0.0

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        return Interval(max(0.0, sample.b_hi - t), min(sample.b_hi, t))

    def covering_t(self, sample: BoundedSample) -> float:
        # y in C_t requires t >= b_hi - y (lower end) and t >= y (upper end)
        return max(sample.b_hi - sample.y, sample.y)


class MinLengthFamily(NestedFamily):
    """A nested family with a floor on strengthened interval width.

    Wraps an offset family. Where the certified width delta(x) is at most
    the floor, every member is the certified interval itself. Elsewhere,
    members whose strengthened width would undershoot the floor are replaced
    by the member at kappa(x), the smallest t whose strengthened width
    reaches the floor. Nesting is preserved, so rank calibration applies
    unchanged.
    """

    def __init__(self, inner: OffsetFamily, min_length: float):
        if not isinstance(inner, OffsetFamily):
            raise TypeError("MinLengthFamily wraps offset families")
        if min_length <= 0.0:
            raise ValueError("min_length must be positive; use ell = 0 for no floor")
        self.inner = inner
        self.min_length = min_length

    def strengthened_width(self, sample: BoundedSample, t: float) -> float:
        return (
            self.inner.interval(sample, t).intersect(sample.b_lo, sample.b_hi).width
        )

    def kappa(self, sample: BoundedSample) -> float:
        """Smallest t whose strengthened width reaches the floor.

        Requires delta(x) > min_length. The strengthened width is piecewise
        linear and nondecreasing in t (slope 2 while neither end is clipped,
        1 while one end is, 0 at the certified width), so the crossing has a
        closed form; kappa_bisect provides the independent check.
        """
        ell = self.min_length
        lo, hi = self.inner.endpoints(sample)
        k_raw = 0.5 * (ell - (hi - lo))
        clip_lo_at = lo - sample.b_lo  # lower endpoint pinned for t >= this
        clip_hi_at = sample.b_hi - hi  # upper endpoint pinned for t >= this
        if k_raw <= min(clip_lo_at, clip_hi_at):
            return k_raw
        if clip_lo_at <= clip_hi_at:
            # lower end pinned at b_lo, upper end still moving: width = hi + t - b_lo
            return ell + sample.b_lo - hi
        # upper end pinned at b_hi, lower end still moving: width = b_hi - lo + t
        return ell - sample.b_hi + lo

    def kappa_bisect(self, sample: BoundedSample, *, tol: float = 1e-12) -> float:
        """Bisection on the strengthened width; oracle for kappa()."""
        ell = self.min_length
        lo, hi = self.inner.endpoints(sample)
        t_lo = -0.5 * (hi - lo)  # raw width is zero here
        t_hi = max(lo - sample.b_lo, sample.b_hi - hi, t_lo) + 1.0
        gap_tol = tol * max(1.0, abs(ell), sample.delta)
        while t_hi - t_lo > gap_tol:
            mid = 0.5 * (t_lo + t_hi)
            if self.strengthened_width(sample, mid) >= ell:
                t_hi = mid
            else:
                t_lo = mid
        return t_hi

    def interval(self, sample: BoundedSample, t: float) -> Interval:
        if sample.delta <= self.min_length:
            return Interval(sample.b_lo, sample.b_hi)
        k = self.kappa(sample)
        t_eff = t if t > k else k
        return self.inner.interval(sample, t_eff).intersect(sample.b_lo, sample.b_hi)

    def covering_t(self, sample: BoundedSample) -> float:
        if sample.delta <= self.min_length:
            return -math.inf  # the certified interval always covers
        score = self.inner.covering_t(sample)
        # below kappa the member is frozen at kappa; if that member already
        # covers, every member does
        return score if score > self.kappa(sample) else -math.inf


def omlt_wrap(inner_family: OffsetFamily, ell: float) -> NestedFamily:
    """Apply the width floor ell to an offset family.

    ell = 0 returns the strengthened family unchanged, so the wrapped method
    reduces exactly to the unwrapped one.
    """
    if ell < 0.0:
        raise ValueError("ell must be >= 0")
    if ell == 0.0:
        return StrengthenedFamily(inner_family)
    return MinLengthFamily(inner_family, ell)


@dataclass(frozen=True)
class OmltModel:
    """Width-floored model: tuned floor plus the selected wrapped variant.

    inner holds the four wrapped families calibrated on the non-reserved
    calibration samples; ell = 0 makes the model behaviorally identical to
    plain cpul_fit on those samples.
    """

    ell: float
    inner: CpulModel
    reserved_fraction: float
    grid: tuple[float, ...]
    grid_mean_width: tuple[float, ...]

    def predict_interval(self, sample: BoundedSample) -> Interval:
        return self.inner.predict_interval(sample)


def default_ell_grid(
    samples: Sequence[BoundedSample], levels: Optional[Sequence[float]] = None
) -> tuple[float, ...]:
    """0 plus certified-width quantiles at 24 equally spaced levels, 2%..50%.

    Anchoring the floor candidates to the low quantiles of delta(x) targets
    exactly the tight-bound region the floor is meant to protect.
    """
    if levels is None:
        levels = np.linspace(0.02, 0.50, 24)
    deltas = [s.delta for s in samples]
    grid = [0.0] + [empirical_quantile(deltas, float(b)) for b in levels]
    return tuple(sorted(grid))


def omlt_fit(
    train_set: Sequence[BoundedSample],
    cal_set: Sequence[BoundedSample],
    alpha: float,
    ell_grid: Optional[Sequence[float]] = None,
    reserved_count: Optional[int] = None,
    *,
    seed: int = 0,
) -> OmltModel:
    """Tune the width floor on a reserved calibration slice, then refit.

    The reserved slice is a seeded-shuffle prefix of the calibration set
    (default one fifth). For each floor in the grid, all four wrapped
    variants are calibrated on the slice and the best mean width recorded;
    the floor with the smallest best width wins, ties going to the smaller
    floor. Final calibration and width-based selection then run on the
    remaining calibration samples with the winning floor.
    """
    cal = list(cal_set)
    n_cal = len(cal)
    if n_cal < 2:
        raise ValueError("need at least 2 calibration samples")
    if reserved_count is None:
        reserved_count = max(1, n_cal // 5)
    if not 0 < reserved_count < n_cal:
        raise ValueError(
            f"reserved_count must be in [1, {n_cal - 1}], got {reserved_count}"
        )
    perm = np.random.default_rng(seed).permutation(n_cal)
    reserved = [cal[i] for i in perm[:reserved_count]]
    remaining = [cal[i] for i in perm[reserved_count:]]

    if ell_grid is None:
        grid = default_ell_grid(reserved)
    else:
        grid = tuple(sorted(float(v) for v in ell_grid))
        if not grid:
            raise ValueError("ell_grid must be non-empty")
        if grid[0] < 0.0:
            raise ValueError("ell_grid values must be >= 0")
        if grid[0] != 0.0:
            raise ValueError("ell_grid must contain 0")

    quantiles = cpul_residual_quantiles(train_set, alpha)
    raw = {tag: variant_family(quantiles, tag) for tag in CPUL_VARIANTS}

    grid_width = []
    for ell in grid:
        best = math.inf
        for tag in CPUL_VARIANTS:
            model = calibrate(omlt_wrap(raw[tag], ell), reserved, alpha)
            best = min(best, mean_predicted_width(model, reserved))
        grid_width.append(best)
    best_ell = grid[int(np.argmin(grid_width))]

    wrapped = {tag: omlt_wrap(raw[tag], best_ell) for tag in CPUL_VARIANTS}
    inner = _fit_variant_families(quantiles, wrapped, remaining, alpha)
    return OmltModel(
        ell=best_ell,
        inner=inner,
        reserved_fraction=reserved_count / n_cal,
        grid=grid,
        grid_mean_width=tuple(grid_width),
    )


def method_predict(model, sample: BoundedSample) -> Interval:
    """Uniform prediction dispatch; every method's output is strengthened."""
    return model.predict_interval(sample)


def fit_method(
    name: str,
    train_set: Sequence[BoundedSample],
    cal_set: Sequence[BoundedSample],
    alpha: float,
    *,
    ell_grid: Optional[Sequence[float]] = None,
    reserved_count: Optional[int] = None,
    seed: int = 0,
):
    """Fit one of METHOD_NAMES on a train/calibration pair."""
    if name == "split-cp-l":
        return split_cp_fit("lower", cal_set, alpha)
    if name == "split-cp-u":
        return split_cp_fit("upper", cal_set, alpha)
    if name == "sfd":
        return sfd_fit(train_set, cal_set, alpha)
    if name == "cqr":
        return cqr_fit(cal_set, alpha)
    if name == "cqr-r":
        return cqr_r_fit(cal_set, alpha)
    if name == "cpul":
        return cpul_fit(train_set, cal_set, alpha)
    if name == "cpul-omlt":
        return omlt_fit(
            train_set, cal_set, alpha, ell_grid, reserved_count, seed=seed
        )
    raise ValueError(f"unknown method {name!r}; valid names: {', '.join(METHOD_NAMES)}")
