"""Two-phase revised simplex for linear programs with variable bounds.

Solves    min c'x   s.t.   A x = b,   l <= x <= u

with any mix of finite and infinite bounds; l_j == u_j fixes a variable.
Entering and leaving variables follow Bland's smallest-index rule, which
rules out cycling at the cost of slower pivoting; the instances in this
package are small and dense, so robustness wins over pivot counts. The basis
is refactorized from scratch every iteration with dense solves, keeping the
implementation short and the numerics predictable.

The returned duals are the equality-row multipliers y with A_B' y = c_B at
the optimal basis, and the reduced costs are z = c - A' y. Together they
certify optimality: z >= 0 on variables at their lower bound, z <= 0 at the
upper bound, and z = 0 on basic or free variables (within tolerance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = ["LpResult", "SimplexError", "lp_solve"]

_LOWER, _UPPER, _FREE, _BASIC = 0, 1, 2, 3


class SimplexError(RuntimeError):
    """Internal solver failure (singular basis, iteration limit)."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0


def _initial_status(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    status = np.full(lower.size, _FREE, dtype=np.int8)
    status[np.isfinite(lower)] = _LOWER
    status[~np.isfinite(lower) & np.isfinite(upper)] = _UPPER
    return status


def _nonbasic_values(
    status: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> np.ndarray:
    x = np.where(status == _UPPER, upper, np.where(status == _LOWER, lower, 0.0))
    return np.where(np.isfinite(x), x, 0.0)


def _simplex(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    basis: list[int],
    status: np.ndarray,
    *,
    tol: float,
    piv_tol: float,
    max_iter: int,
):
    """Primal simplex from a feasible basis; mutates basis and status.

    Returns (kind, x, y, z, iterations) with kind "optimal" or "unbounded".
    """
    m, n = a.shape
    for it in range(max_iter):
        basis_arr = np.asarray(basis, dtype=int)
        x = _nonbasic_values(status, lower, upper)
        if m:
            a_basis = a[:, basis_arr]
            try:
                x[basis_arr] = np.linalg.solve(a_basis, b - a @ x)
                y = np.linalg.solve(a_basis.T, c[basis_arr])
            except np.linalg.LinAlgError as exc:
                raise SimplexError("singular basis") from exc
        else:
            y = np.zeros(0)
        z = c - a.T @ y if m else c.astype(float).copy()

        # entering variable: Bland, smallest eligible index
        enter = -1
        for j in range(n):
            sj = status[j]
            if sj == _BASIC or lower[j] == upper[j]:
                continue
            zj = z[j]
            if (
                (sj == _LOWER and zj < -tol)
                or (sj == _UPPER and zj > tol)
                or (sj == _FREE and abs(zj) > tol)
            ):
                enter = j
                break
        if enter < 0:
            return "optimal", x, y, z, it

        up = status[enter] == _LOWER or (status[enter] == _FREE and z[enter] < 0.0)
        sigma = 1.0 if up else -1.0
        w = np.linalg.solve(a_basis, a[:, enter]) if m else np.zeros(0)

        # ratio test: step until the entering variable's opposite bound or a
        # basic variable's own bound blocks; Bland ties on variable index
        own = upper[enter] - lower[enter]
        step = own if math.isfinite(own) else math.inf
        leave_pos = -1
        leave_to_upper = False
        for i in range(m):
            di = sigma * w[i]
            k = basis[i]
            if di > piv_tol:
                room = x[k] - lower[k]
                if not math.isfinite(room):
                    continue
                ratio = max(room, 0.0) / di
                to_upper = False
            elif di < -piv_tol:
                room = upper[k] - x[k]
                if not math.isfinite(room):
                    continue
                ratio = max(room, 0.0) / (-di)
                to_upper = True
            else:
                continue
            if ratio < step - piv_tol or (
                ratio < step + piv_tol
                and leave_pos >= 0
                and k < basis[leave_pos]
            ):
                step = min(step, ratio)
                leave_pos = i
                leave_to_upper = to_upper
            elif leave_pos < 0 and ratio <= step:
                step = ratio
                leave_pos = i
                leave_to_upper = to_upper
        if not math.isfinite(step):
            return "unbounded", x, y, z, it
        if leave_pos < 0:
            # entering variable runs to its opposite bound: pure bound flip
            status[enter] = _UPPER if status[enter] == _LOWER else _LOWER
            continue
        leaving = basis[leave_pos]
        basis[leave_pos] = enter
        status[enter] = _BASIC
        status[leaving] = _UPPER if leave_to_upper else _LOWER
    raise SimplexError(f"iteration limit reached ({max_iter})")


def lp_solve(
    c: Sequence[float],
    a_eq: Optional[np.ndarray] = None,
    b_eq: Optional[Sequence[float]] = None,
    lower: Optional[Sequence[float]] = None,
    upper: Optional[Sequence[float]] = None,
    *,
    tol: float = 1e-9,
    piv_tol: float = 1e-10,
    max_iter: Optional[int] = None,
) -> LpResult:
    """Solve min c'x s.t. a_eq x = b_eq, lower <= x <= upper.

    Bounds default to (-inf, +inf). Infeasibility and unboundedness are
    reported through the status field, never silently.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    if a_eq is None:
        a = np.zeros((0, n))
        b = np.zeros(0)
    else:
        a = np.asarray(a_eq, dtype=float)
        if a.ndim != 2 or a.shape[1] != n:
            raise ValueError(f"a_eq must be (m, {n}), got {a.shape}")
        b = np.asarray(b_eq, dtype=float)
        if b.shape != (a.shape[0],):
            raise ValueError("b_eq length must match a_eq rows")
    m = a.shape[0]
    l = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    u = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if l.shape != (n,) or u.shape != (n,):
        raise ValueError("bound vectors must match the number of variables")
    if np.any(l > u):
        return LpResult(status="infeasible")
    if max_iter is None:
        max_iter = 2000 + 200 * (n + m)

    # Phase I: artificial variables absorb the residual of putting every
    # structural variable at a bound (or 0 when free)
    status = _initial_status(l, u)
    x0 = _nonbasic_values(status, l, u)
    resid = b - a @ x0 if m else np.zeros(0)
    signs = np.where(resid >= 0.0, 1.0, -1.0)
    a_full = np.hstack([a, np.diag(signs)]) if m else a.copy()
    c_phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    l_full = np.concatenate([l, np.zeros(m)])
    u_full = np.concatenate([u, np.full(m, np.inf)])
    status_full = np.concatenate([status, np.full(m, _BASIC, dtype=np.int8)])
    basis = list(range(n, n + m))

    kind, x, y, z, it1 = _simplex(
        a_full, b, c_phase1, l_full, u_full, basis, status_full,
        tol=tol, piv_tol=piv_tol, max_iter=max_iter,
    )
    if kind != "optimal":
        raise SimplexError("phase 1 did not terminate at an optimum")
    scale = max(1.0, float(np.max(np.abs(b))) if m else 1.0)
    if float(c_phase1 @ x) > 1e-7 * scale:
        return LpResult(status="infeasible", iterations=it1)

    # Phase II: original costs; artificials pinned at zero
    c_phase2 = np.concatenate([c, np.zeros(m)])
    l_full[n:] = 0.0
    u_full[n:] = 0.0
    kind, x, y, z, it2 = _simplex(
        a_full, b, c_phase2, l_full, u_full, basis, status_full,
        tol=tol, piv_tol=piv_tol, max_iter=max_iter,
    )
    if kind == "unbounded":
        return LpResult(status="unbounded", iterations=it1 + it2)
    return LpResult(
        status="optimal",
        x=x[:n].copy(),
        objective=float(c @ x[:n]),
        duals=y.copy(),
        reduced_costs=z[:n].copy(),
        iterations=it1 + it2,
    )
