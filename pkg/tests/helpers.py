"""Shared synthetic data builders for the test suite."""

from __future__ import annotations

import numpy as np

from gapcal.intervals import BoundedSample


def synth_samples(rng, n, *, het: float = 1.0, base: float = 50.0) -> list[BoundedSample]:
    """Random valid records with input-dependent bound tightness.

    The lower-bound residual grows with the latent feature while the
    upper-bound residual shrinks, so the four endpoint combinations genuinely
    differ.
    """
    xs = rng.uniform(0.0, 1.0, n)
    ys = base + 5.0 * xs + rng.normal(0.0, 0.5, n)
    lo_gap = rng.gamma(2.0, 0.2 + het * xs)
    hi_gap = rng.gamma(2.0, 0.2 + het * (1.0 - xs))
    return [
        BoundedSample(y=float(y), b_lo=float(y - g1), b_hi=float(y + g2), features=(float(x),))
        for y, g1, g2, x in zip(ys, lo_gap, hi_gap, xs)
    ]


def homoskedastic_samples(rng, n, *, width: float = 2.0, base: float = 50.0) -> list[BoundedSample]:
    """Records whose bound pair has constant width and centered label noise."""
    ys = base + rng.normal(0.0, 1.0, n)
    off = rng.uniform(0.0, width, n)
    return [
        BoundedSample(y=float(y), b_lo=float(y - o), b_hi=float(y + (width - o)))
        for y, o in zip(ys, off)
    ]
