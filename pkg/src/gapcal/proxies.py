"""Valid bound producers: ridge base predictors plus feasibility recovery.

Point predictions never need to be accurate for validity. The primal
recovery rebalances and re-clips any generation guess into the dispatch
feasible set, so evaluating the cost there certifies an upper bound on the
optimum. The dual recovery completes any (lam, pi) guess into a dual
feasible point, certifying a lower bound. Every emitted record therefore
carries a true sandwich b_lo <= y <= b_hi whose tightness, not its validity,
reflects predictor quality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dispatch import (
    DualSolution,
    GridCase,
    LoadSample,
    PrimalSolution,
    primal_objective,
    solve_dispatch,
)
from .intervals import BoundedSample

__all__ = [
    "LinearPredictor",
    "PrimalProxy",
    "DualProxy",
    "fit_ridge",
    "power_balance",
    "primal_recover",
    "dual_recover",
    "fit_primal_proxy",
    "fit_dual_proxy",
    "make_bounded_samples",
]

_SANDWICH_SLACK = 1e-8


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LinearPredictor:
    """Affine map with per-output clipping: clip(W x + b, lo, hi)."""

    weights: np.ndarray  # (outputs, features)
    bias: np.ndarray  # (outputs,)
    clip_lo: np.ndarray
    clip_hi: np.ndarray

    def __post_init__(self) -> None:
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("weights must be (outputs, features), bias (outputs,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("predictor parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "clip_lo", _frozen(self.clip_lo))
        object.__setattr__(self, "clip_hi", _frozen(self.clip_hi))

    def predict(self, features: Sequence[float]) -> np.ndarray:
        raw = self.weights @ np.asarray(features, dtype=float) + self.bias
        return np.clip(raw, self.clip_lo, self.clip_hi)

    def with_clip(self, lo, hi) -> "LinearPredictor":
        return LinearPredictor(self.weights, self.bias, lo, hi)


def fit_ridge(
    features: np.ndarray, targets: np.ndarray, regularization: float
) -> LinearPredictor:
    """Ridge regression with an unpenalized intercept.

    Solves the regularized normal equations directly; regularization 0 is
    plain least squares and raises on a singular system.
    """
    x = np.asarray(features, dtype=float)
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if x.ndim != 2 or t.ndim != 2 or x.shape[0] != t.shape[0]:
        raise ValueError("features and targets must have matching row counts")
    if regularization < 0:
        raise ValueError("regularization must be >= 0")
    n, k = x.shape
    design = np.hstack([x, np.ones((n, 1))])
    gram = design.T @ design
    gram[np.arange(k), np.arange(k)] += regularization  # intercept unpenalized
    rhs = design.T @ t
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular normal equations; use positive regularization"
        ) from exc
    if not np.allclose(gram @ coef, rhs, atol=1e-6 * max(1.0, float(np.abs(rhs).max()))):
        raise ValueError("singular normal equations; use positive regularization")
    n_out = t.shape[1]
    return LinearPredictor(
        weights=coef[:k].T,
        bias=coef[k],
        clip_lo=np.full(n_out, -np.inf),
        clip_hi=np.full(n_out, np.inf),
    )


def power_balance(
    p_tilde: np.ndarray,
    p_min: np.ndarray,
    p_max: np.ndarray,
    total_demand: float,
) -> np.ndarray:
    """Rebalance a generation vector to meet total demand within bounds.

    Proportional headroom rule: on shortfall every generator moves toward
    its upper limit by the common fraction that restores the balance, on
    surplus toward its lower limit. The output satisfies 1'p = total_demand
    and stays inside [p_min, p_max]; a final clamp absorbs 1-ulp excursions.
    """
    p_tilde = np.asarray(p_tilde, dtype=float)
    p_min = np.asarray(p_min, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    scale = max(1.0, float(np.abs(p_max).max(initial=0.0)))
    if np.any(p_tilde < p_min - 1e-9 * scale) or np.any(p_tilde > p_max + 1e-9 * scale):
        raise ValueError("p_tilde must lie within [p_min, p_max]")
    lo_total, hi_total = float(p_min.sum()), float(p_max.sum())
    if not (lo_total - 1e-9 * scale <= total_demand <= hi_total + 1e-9 * scale):
        raise ValueError("total demand outside aggregate generation limits")
    current = float(p_tilde.sum())
    if current < total_demand:
        headroom = hi_total - current
        if headroom <= 0.0:
            p = p_max.copy()
        else:
            p = p_tilde + ((total_demand - current) / headroom) * (p_max - p_tilde)
    elif current > total_demand:
        headroom = current - lo_total
        if headroom <= 0.0:
            p = p_min.copy()
        else:
            p = p_tilde - ((current - total_demand) / headroom) * (p_tilde - p_min)
    else:
        p = p_tilde.copy()
    return np.clip(p, p_min, p_max)


def primal_recover(case: GridCase, d: np.ndarray, p_tilde: np.ndarray) -> PrimalSolution:
    """Feasible dispatch point from any in-bounds generation guess.

    Rebalances, recomputes flows, and absorbs thermal excess into the
    violation variables; the objective of the result is a certified upper
    bound on the optimal value.
    """
    d = np.asarray(d, dtype=float)
    p = power_balance(p_tilde, case.p_min, case.p_max, float(d.sum()))
    f = case.flows(p, d)
    xi = np.maximum(np.maximum(f - case.f_max, case.f_min - f), 0.0)
    return PrimalSolution(p=p, f=f, xi=xi, objective=primal_objective(case, p, xi))


def dual_recover(case: GridCase, d: np.ndarray, lam: float, pi: np.ndarray) -> DualSolution:
    """Dual-feasible point from any (lam, pi) guess with |pi| <= M.

    mu splits the sign of pi, z is the generator stationarity residual split
    by sign, and y absorbs what is left of the violation price; every dual
    equality then holds by construction and the objective is a certified
    lower bound on the optimal value.
    """
    d = np.asarray(d, dtype=float)
    pi = np.clip(np.asarray(pi, dtype=float), -case.big_m, case.big_m)
    if pi.shape != (case.n_line,):
        raise ValueError(f"pi must have shape ({case.n_line},)")
    lam = float(lam)
    mu_lo = np.maximum(0.0, pi)
    mu_hi = np.maximum(0.0, -pi)
    z = case.c - lam - (case.ptdf @ case.a_gen).T @ pi
    z_lo = np.maximum(0.0, z)
    z_hi = np.maximum(0.0, -z)
    y = case.big_m - mu_lo - mu_hi  # = M - |pi| >= 0 after clipping
    load_flows = case.ptdf @ (case.a_load @ d)
    objective = float(
        lam * d.sum()
        + load_flows @ pi
        + case.f_min @ mu_lo
        - case.f_max @ mu_hi
        + case.p_min @ z_lo
        - case.p_max @ z_hi
    )
    return DualSolution(
        lam=lam, pi=pi, mu_lo=mu_lo, mu_hi=mu_hi, z_lo=z_lo, z_hi=z_hi, y=y,
        objective=objective,
    )


@dataclass(frozen=True)
class PrimalProxy:
    """Generation predictor (clipped to [p_min, p_max]) plus recovery."""

    predictor: LinearPredictor
    case: GridCase

    def predict_generation(self, d: np.ndarray) -> np.ndarray:
        return self.predictor.predict(np.asarray(d, dtype=float) / self.case.d0)

    def recover(self, d: np.ndarray) -> PrimalSolution:
        return primal_recover(self.case, d, self.predict_generation(d))


@dataclass(frozen=True)
class DualProxy:
    """(lam, pi) predictor (pi clipped to [-M, M]) plus recovery."""

    predictor: LinearPredictor
    case: GridCase

    def predict_prices(self, d: np.ndarray) -> tuple[float, np.ndarray]:
        out = self.predictor.predict(np.asarray(d, dtype=float) / self.case.d0)
        return float(out[0]), out[1:]

    def recover(self, d: np.ndarray) -> DualSolution:
        lam, pi = self.predict_prices(d)
        return dual_recover(self.case, d, lam, pi)


def fit_primal_proxy(
    case: GridCase, loads: np.ndarray, p_opt: np.ndarray, regularization: float
) -> PrimalProxy:
    """Ridge on per-unit loads against LP-optimal generation."""
    pu = np.asarray(loads, dtype=float) / case.d0
    predictor = fit_ridge(pu, p_opt, regularization).with_clip(case.p_min, case.p_max)
    return PrimalProxy(predictor=predictor, case=case)


def fit_dual_proxy(
    case: GridCase,
    loads: np.ndarray,
    lam_opt: np.ndarray,
    pi_opt: np.ndarray,
    regularization: float,
) -> DualProxy:
    """Ridge on per-unit loads against LP-optimal (lam, pi)."""
    pu = np.asarray(loads, dtype=float) / case.d0
    lam_opt = np.asarray(lam_opt, dtype=float)
    pi_opt = np.asarray(pi_opt, dtype=float).reshape(len(lam_opt), case.n_line)
    targets = np.column_stack([lam_opt[:, None], pi_opt])
    clip_lo = np.concatenate([[-np.inf], np.full(case.n_line, -case.big_m)])
    clip_hi = np.concatenate([[np.inf], np.full(case.n_line, case.big_m)])
    predictor = fit_ridge(pu, targets, regularization).with_clip(clip_lo, clip_hi)
    return DualProxy(predictor=predictor, case=case)


def make_bounded_samples(
    case: GridCase,
    load_samples: Sequence,
    primal_proxy: PrimalProxy,
    dual_proxy: DualProxy,
    labels: Optional[Sequence[float]] = None,
) -> list[BoundedSample]:
    """Assemble records (per-unit load features, LP optimum, bound pair).

    load_samples may hold LoadSample objects or raw load vectors. Labels are
    LP optima; when not supplied they are computed here. A sandwich
    violation beyond numerical slack indicates a recovery bug and raises
    naming the offending sample, never passes silently.
    """
    out: list[BoundedSample] = []
    for i, ls in enumerate(load_samples):
        d = ls.d if isinstance(ls, LoadSample) else np.asarray(ls, dtype=float)
        y = float(labels[i]) if labels is not None else solve_dispatch(case, d)[0].objective
        b_hi = primal_proxy.recover(d).objective
        b_lo = dual_proxy.recover(d).objective
        slack = _SANDWICH_SLACK * max(1.0, abs(y))
        if not (b_lo - slack <= y <= b_hi + slack):
            raise RuntimeError(
                f"bound sandwich violated at sample {i}: "
                f"{b_lo!r} <= {y!r} <= {b_hi!r} fails"
            )
        out.append(
            BoundedSample(y=y, b_lo=b_lo, b_hi=b_hi, features=tuple(d / case.d0))
        )
    return out
