"""Synthetic economic dispatch benchmark.

Grid case construction, PTDF matrices, an exact LP oracle that produces true
optimal values (labels) together with dual prices, and the two-factor load
sampler. The dispatch model minimizes generation cost plus a large penalty
on thermal violations:

    min  c'p + M 1'xi
    s.t. 1'p = 1'd                      [lam]    system balance
         P Ag p - f = P Ad d            [pi]     flows from injections
         f + xi >= f_min                [mu_lo]
        -f + xi >= -f_max               [mu_hi]
         p_min <= p <= p_max            [z_lo, z_hi]
         xi >= 0                        [y]

with P the slack-referenced PTDF matrix, Ag/Ad the generator/load incidence
matrices, and M the violation penalty. Any feasible point of the dual of
this LP certifies a lower bound on the optimum (weak duality), which is what
the proxy layer exploits; the solver here returns a matched primal-dual pair
whose objectives agree to strong-duality tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lp import LpResult, lp_solve

__all__ = [
    "GridCase",
    "PrimalSolution",
    "DualSolution",
    "LoadSample",
    "TOPOLOGIES",
    "compute_ptdf",
    "build_case",
    "sample_loads",
    "load_rng",
    "solve_dispatch",
    "primal_objective",
    "dual_objective",
    "primal_residuals",
    "dual_residuals",
    "case_to_dict",
    "case_from_dict",
]

TOPOLOGIES = ("ring", "star", "tree")

# feasibility scale-relative tolerance used by residual checks and guards
_FEAS_TOL = 1e-8


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GridCase:
    """Immutable dispatch instance template; arrays are read-only.

    Units: costs in currency/MW, limits and loads in MW, PTDF dimensionless.
    big_m prices violations and must exceed every marginal cost so that
    violations only appear when no feasible flow pattern exists.
    """

    n_bus: int
    n_gen: int
    n_load: int
    n_line: int
    c: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    f_min: np.ndarray
    f_max: np.ndarray
    ptdf: np.ndarray
    a_gen: np.ndarray
    a_load: np.ndarray
    big_m: float
    d0: np.ndarray

    def __post_init__(self) -> None:
        n, g, d, e = self.n_bus, self.n_gen, self.n_load, self.n_line
        object.__setattr__(self, "c", _frozen(self.c))
        object.__setattr__(self, "p_min", _frozen(self.p_min))
        object.__setattr__(self, "p_max", _frozen(self.p_max))
        object.__setattr__(self, "f_min", _frozen(self.f_min))
        object.__setattr__(self, "f_max", _frozen(self.f_max))
        object.__setattr__(self, "ptdf", _frozen(self.ptdf))
        object.__setattr__(self, "a_gen", _frozen(self.a_gen))
        object.__setattr__(self, "a_load", _frozen(self.a_load))
        object.__setattr__(self, "d0", _frozen(self.d0))
        shapes = {
            "c": (self.c, (g,)),
            "p_min": (self.p_min, (g,)),
            "p_max": (self.p_max, (g,)),
            "f_min": (self.f_min, (e,)),
            "f_max": (self.f_max, (e,)),
            "ptdf": (self.ptdf, (e, n)),
            "a_gen": (self.a_gen, (n, g)),
            "a_load": (self.a_load, (n, d)),
            "d0": (self.d0, (d,)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {arr.shape}")
        if np.any(self.p_min > self.p_max):
            raise ValueError("p_min must be <= p_max")
        if np.any(self.f_min > self.f_max):
            raise ValueError("f_min must be <= f_max")
        if g and self.big_m <= float(self.c.max()):
            raise ValueError("big_m must exceed the largest marginal cost")
        for name, inc in (("a_gen", self.a_gen), ("a_load", self.a_load)):
            ok = np.all(np.sum(inc == 1.0, axis=0) == 1) and np.all(
                np.sum(inc != 0.0, axis=0) == 1
            )
            if not ok:
                raise ValueError(f"{name} columns must have exactly one entry equal to 1")

    def flows(self, p: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Line flows induced by generation p and load d."""
        return self.ptdf @ (self.a_gen @ p - self.a_load @ d)


@dataclass(frozen=True)
class PrimalSolution:
    p: np.ndarray
    f: np.ndarray
    xi: np.ndarray
    objective: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", _frozen(self.p))
        object.__setattr__(self, "f", _frozen(self.f))
        object.__setattr__(self, "xi", _frozen(self.xi))


@dataclass(frozen=True)
class DualSolution:
    """Dual point of the dispatch LP; `lam` is the balance multiplier
    (written out because `lambda` is reserved in Python)."""

    lam: float
    pi: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    y: np.ndarray
    objective: float

    def __post_init__(self) -> None:
        for name in ("pi", "mu_lo", "mu_hi", "z_lo", "z_hi", "y"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class LoadSample:
    """One load draw: d = alpha_factor * beta_factors * d0, elementwise."""

    d: np.ndarray
    alpha_factor: float
    beta_factors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "d", _frozen(self.d))
        object.__setattr__(self, "beta_factors", _frozen(self.beta_factors))


def _connected(n_bus: int, branches: Sequence[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n_bus)]
    for i, j in branches:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n_bus
    stack = [0]
    seen[0] = True
    while stack:
        node = stack.pop()
        for nxt in adj[node]:
            if not seen[nxt]:
                seen[nxt] = True
                stack.append(nxt)
    return all(seen)


def compute_ptdf(
    branches: Sequence[tuple[int, int]],
    susceptances: Sequence[float],
    n_bus: int,
    slack_bus: int = 0,
) -> np.ndarray:
    """Slack-referenced PTDF matrix (lines x buses).

    Column n holds the line flows caused by 1 MW injected at bus n and
    withdrawn at the slack bus; the slack column is identically zero. Built
    by solving the branch susceptance matrix against the reduced nodal
    susceptance matrix (slack row and column removed). For balanced
    injection vectors the resulting flows do not depend on the slack choice.
    """
    branches = [(int(i), int(j)) for i, j in branches]
    bsus = np.asarray(susceptances, dtype=float)
    n_line = len(branches)
    if bsus.shape != (n_line,):
        raise ValueError("need one susceptance per branch")
    if np.any(bsus <= 0):
        raise ValueError("susceptances must be positive")
    if not 0 <= slack_bus < n_bus:
        raise ValueError("slack bus out of range")
    for i, j in branches:
        if not (0 <= i < n_bus and 0 <= j < n_bus) or i == j:
            raise ValueError(f"bad branch ({i}, {j})")
    if not _connected(n_bus, branches):
        raise ValueError("disconnected network")
    if n_bus == 1:
        return np.zeros((n_line, 1))
    incidence = np.zeros((n_line, n_bus))
    for k, (i, j) in enumerate(branches):
        incidence[k, i] = 1.0
        incidence[k, j] = -1.0
    b_branch = bsus[:, None] * incidence
    b_bus = incidence.T @ b_branch
    keep = [b for b in range(n_bus) if b != slack_bus]
    reduced = b_bus[np.ix_(keep, keep)]
    try:
        ptdf_keep = np.linalg.solve(reduced, b_branch[:, keep].T).T
    except np.linalg.LinAlgError as exc:  # connected network should not hit this
        raise ValueError("singular reduced susceptance matrix") from exc
    ptdf = np.zeros((n_line, n_bus))
    ptdf[:, keep] = ptdf_keep
    return ptdf


def _topology_edges(
    n_bus: int, topology: str, rng: np.random.Generator
) -> list[tuple[int, int]]:
    if topology == "ring":
        return [(i, (i + 1) % n_bus) for i in range(n_bus)]
    if topology == "star":
        return [(0, i) for i in range(1, n_bus)]
    if topology == "tree":
        edges = [(int(rng.integers(0, i)), i) for i in range(1, n_bus)]
        existing = {frozenset(e) for e in edges}
        want_chords = max(1, n_bus // 3)
        chords = 0
        attempts = 0
        while chords < want_chords and attempts < 50 * n_bus:
            attempts += 1
            i, j = (int(v) for v in rng.integers(0, n_bus, size=2))
            if i == j or frozenset((i, j)) in existing:
                continue
            edges.append((min(i, j), max(i, j)))
            existing.add(frozenset((i, j)))
            chords += 1
        return edges
    raise ValueError(f"unknown topology {topology!r}; valid: {', '.join(TOPOLOGIES)}")


def build_case(
    n_bus: int,
    topology: str = "ring",
    seed: int = 0,
    n_gen: Optional[int] = None,
    n_load: Optional[int] = None,
) -> GridCase:
    """Deterministic synthetic dispatch case.

    Line limits are sized from the flows of the cost-optimal dispatch at
    nominal load with limits removed, each scaled by a random margin above 1,
    so the nominal instance is feasible with zero violations while a
    noticeable share of perturbed load draws binds one or more lines. Total
    capacity is at least 1.2x total nominal load, which keeps every draw of
    the load sampler inside the aggregate generation range. The violation
    penalty is 100x the largest marginal cost.
    """
    if n_bus < 2:
        raise ValueError("need >= 2 buses")
    rng = np.random.default_rng(seed)
    edges = _topology_edges(n_bus, topology, rng)
    n_line = len(edges)
    sus = rng.uniform(5.0, 15.0, n_line)
    ptdf = compute_ptdf(edges, sus, n_bus, slack_bus=0)

    if n_gen is None:
        n_gen = max(2, -(-n_bus // 3))
    if n_load is None:
        n_load = max(1, -(-n_bus // 2))
    if n_gen < 1:
        raise ValueError("need at least one generator")
    if n_load < 1:
        raise ValueError("need at least one load")
    gen_bus = np.sort(rng.choice(n_bus, size=n_gen, replace=n_gen > n_bus))
    load_bus = np.sort(rng.choice(n_bus, size=n_load, replace=n_load > n_bus))
    c = rng.uniform(10.0, 50.0, n_gen)
    d0 = rng.uniform(20.0, 100.0, n_load)
    total = float(d0.sum())

    p_min = np.zeros(n_gen)
    p_max = rng.uniform(0.7, 1.3, n_gen) * (1.5 * total / n_gen)
    shortfall = 1.2 * total / float(p_max.sum())
    if shortfall > 1.0:
        p_max = p_max * (shortfall * (1.0 + 1e-9))

    a_gen = np.zeros((n_bus, n_gen))
    a_gen[gen_bus, np.arange(n_gen)] = 1.0
    a_load = np.zeros((n_bus, n_load))
    a_load[load_bus, np.arange(n_load)] = 1.0
    big_m = 100.0 * float(c.max())

    wide = np.full(n_line, 1e9)
    unlimited = GridCase(
        n_bus=n_bus, n_gen=n_gen, n_load=n_load, n_line=n_line,
        c=c, p_min=p_min, p_max=p_max, f_min=-wide, f_max=wide,
        ptdf=ptdf, a_gen=a_gen, a_load=a_load, big_m=big_m, d0=d0,
    )
    nominal, _ = solve_dispatch(unlimited, d0)
    base = np.abs(nominal.f)
    margin = rng.uniform(1.08, 1.45, n_line)
    floor = 0.15 * float(base.max()) + 1.0
    f_max = np.maximum(base * margin, floor)
    return GridCase(
        n_bus=n_bus, n_gen=n_gen, n_load=n_load, n_line=n_line,
        c=c, p_min=p_min, p_max=p_max, f_min=-f_max, f_max=f_max,
        ptdf=ptdf, a_gen=a_gen, a_load=a_load, big_m=big_m, d0=d0,
    )


def load_rng(base_seed: int, index: int) -> np.random.Generator:
    """Per-sample random stream (base_seed, index): independent of ordering
    and of how samples are distributed over workers."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(base_seed, index)))


def sample_loads(
    case: GridCase,
    global_range: tuple[float, float] = (0.6, 1.0),
    local_range: tuple[float, float] = (0.85, 1.15),
    rng: Optional[np.random.Generator] = None,
) -> LoadSample:
    """One draw of the two-factor load model.

    A single global factor scales every load, an independent local factor
    scales each load separately: d_l = alpha * beta_l * d0_l.
    """
    if rng is None:
        raise ValueError("pass an explicit rng; sampling must be reproducible")
    g_lo, g_hi = (float(v) for v in global_range)
    l_lo, l_hi = (float(v) for v in local_range)
    if g_lo <= 0 or l_lo <= 0 or g_hi < g_lo or l_hi < l_lo:
        raise ValueError("factor ranges must be positive and ordered")
    alpha = float(rng.uniform(g_lo, g_hi))
    beta = rng.uniform(l_lo, l_hi, case.n_load)
    return LoadSample(d=alpha * beta * case.d0, alpha_factor=alpha, beta_factors=beta)


def primal_objective(case: GridCase, p: np.ndarray, xi: np.ndarray) -> float:
    """c'p + M 1'xi."""
    return float(case.c @ p + case.big_m * np.sum(xi))


def dual_objective(case: GridCase, d: np.ndarray, dual: DualSolution) -> float:
    """lam 1'd + (P Ad d)'pi + f_min'mu_lo - f_max'mu_hi + p_min'z_lo - p_max'z_hi."""
    load_flows = case.ptdf @ (case.a_load @ np.asarray(d, dtype=float))
    return float(
        dual.lam * np.sum(d)
        + load_flows @ dual.pi
        + case.f_min @ dual.mu_lo
        - case.f_max @ dual.mu_hi
        + case.p_min @ dual.z_lo
        - case.p_max @ dual.z_hi
    )


def solve_dispatch(case: GridCase, d: np.ndarray) -> tuple[PrimalSolution, DualSolution]:
    """Exact primal and dual solutions of the dispatch LP for load vector d.

    Variables are stacked [p, f, xi, s_lo, s_hi] with slack columns turning
    the two thermal inequalities into equalities. lam and pi come from the
    equality-row duals; mu from the thermal-row duals; z from the sign-split
    reduced costs of p; and y from the xi stationarity identity. Tiny
    negative multipliers from roundoff are clamped at zero. A strong-duality
    self-check guards against silent solver failures.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (case.n_load,):
        raise ValueError(f"d must have shape ({case.n_load},)")
    total = float(d.sum())
    span = max(1.0, float(case.p_max.sum()))
    if not (case.p_min.sum() - _FEAS_TOL * span <= total <= case.p_max.sum() + _FEAS_TOL * span):
        raise ValueError(
            f"infeasible demand: total {total} outside aggregate generation range"
        )

    g, e = case.n_gen, case.n_line
    n = g + 4 * e
    m = 1 + 3 * e
    cost = np.concatenate([case.c, np.zeros(e), np.full(e, case.big_m), np.zeros(2 * e)])
    lower = np.concatenate([case.p_min, np.full(e, -np.inf), np.zeros(3 * e)])
    upper = np.concatenate([case.p_max, np.full(3 * e + e, np.inf)])

    a = np.zeros((m, n))
    b = np.zeros(m)
    a[0, :g] = 1.0
    b[0] = total
    if e:
        gen_shift = case.ptdf @ case.a_gen  # (E, G)
        load_shift = case.ptdf @ case.a_load  # (E, D)
        eye = np.eye(e)
        rows_flow = slice(1, 1 + e)
        rows_lo = slice(1 + e, 1 + 2 * e)
        rows_hi = slice(1 + 2 * e, 1 + 3 * e)
        a[rows_flow, :g] = gen_shift
        a[rows_flow, g : g + e] = -eye
        b[rows_flow] = load_shift @ d
        a[rows_lo, g : g + e] = eye
        a[rows_lo, g + e : g + 2 * e] = eye
        a[rows_lo, g + 2 * e : g + 3 * e] = -eye
        b[rows_lo] = case.f_min
        a[rows_hi, g : g + e] = -eye
        a[rows_hi, g + e : g + 2 * e] = eye
        a[rows_hi, g + 3 * e :] = -eye
        b[rows_hi] = -case.f_max

    res: LpResult = lp_solve(cost, a, b, lower, upper)
    if res.status != "optimal":
        raise RuntimeError(f"dispatch LP terminated with status {res.status!r}")

    p = res.x[:g]
    f = res.x[g : g + e]
    xi = np.maximum(res.x[g + e : g + 2 * e], 0.0)
    primal = PrimalSolution(p=p, f=f, xi=xi, objective=primal_objective(case, p, xi))

    lam = float(res.duals[0])
    pi = res.duals[1 : 1 + e].copy()
    mu_lo = np.maximum(res.duals[1 + e : 1 + 2 * e], 0.0)
    mu_hi = np.maximum(res.duals[1 + 2 * e :], 0.0)
    z_p = res.reduced_costs[:g]
    z_lo = np.maximum(z_p, 0.0)
    z_hi = np.maximum(-z_p, 0.0)
    y = np.maximum(case.big_m - mu_lo - mu_hi, 0.0)
    load_flows = case.ptdf @ (case.a_load @ d)
    dual_obj = float(
        lam * total
        + load_flows @ pi
        + case.f_min @ mu_lo
        - case.f_max @ mu_hi
        + case.p_min @ z_lo
        - case.p_max @ z_hi
    )
    dual = DualSolution(
        lam=lam, pi=pi, mu_lo=mu_lo, mu_hi=mu_hi, z_lo=z_lo, z_hi=z_hi, y=y,
        objective=dual_obj,
    )
    gap = abs(primal.objective - dual.objective)
    if gap > 1e-7 * max(1.0, abs(primal.objective)):
        raise RuntimeError(
            f"strong duality violated: primal {primal.objective}, dual {dual.objective}"
        )
    return primal, dual


def primal_residuals(case: GridCase, d: np.ndarray, sol: PrimalSolution) -> dict[str, float]:
    """Worst-case violations of the primal constraints (all should be ~0)."""
    d = np.asarray(d, dtype=float)
    flows = case.flows(sol.p, d)
    out = {
        "balance": abs(float(sol.p.sum() - d.sum())),
        "flow_def": float(np.max(np.abs(flows - sol.f), initial=0.0)),
        "p_bounds": float(
            np.max(np.maximum(case.p_min - sol.p, sol.p - case.p_max), initial=0.0)
        ),
        "xi_nonneg": float(np.max(-sol.xi, initial=0.0)),
        "thermal_lo": float(np.max(case.f_min - sol.f - sol.xi, initial=0.0)),
        "thermal_hi": float(np.max(sol.f - case.f_max - sol.xi, initial=0.0)),
        "objective": abs(sol.objective - primal_objective(case, sol.p, sol.xi)),
    }
    return out


def dual_residuals(case: GridCase, dual: DualSolution) -> dict[str, float]:
    """Worst-case violations of dual feasibility (all should be ~0)."""
    gen_shift = case.ptdf @ case.a_gen
    stat_p = dual.lam + gen_shift.T @ dual.pi + dual.z_lo - dual.z_hi - case.c
    stat_f = -dual.pi + dual.mu_lo - dual.mu_hi
    stat_xi = dual.mu_lo + dual.mu_hi + dual.y - case.big_m
    signs = [dual.mu_lo, dual.mu_hi, dual.z_lo, dual.z_hi, dual.y]
    worst_sign = max(float(np.max(-v, initial=0.0)) for v in signs)
    return {
        "stationarity_p": float(np.max(np.abs(stat_p), initial=0.0)),
        "stationarity_f": float(np.max(np.abs(stat_f), initial=0.0)),
        "stationarity_xi": float(np.max(np.abs(stat_xi), initial=0.0)),
        "signs": worst_sign,
    }


def case_to_dict(case: GridCase) -> dict:
    """JSON-ready mapping with field names exactly as the type definition."""
    return {
        "n_bus": case.n_bus,
        "n_gen": case.n_gen,
        "n_load": case.n_load,
        "n_line": case.n_line,
        "c": case.c.tolist(),
        "p_min": case.p_min.tolist(),
        "p_max": case.p_max.tolist(),
        "f_min": case.f_min.tolist(),
        "f_max": case.f_max.tolist(),
        "ptdf": case.ptdf.tolist(),
        "a_gen": case.a_gen.tolist(),
        "a_load": case.a_load.tolist(),
        "big_m": case.big_m,
        "d0": case.d0.tolist(),
    }


def case_from_dict(payload: dict) -> GridCase:
    fields = {
        "n_bus", "n_gen", "n_load", "n_line", "c", "p_min", "p_max",
        "f_min", "f_max", "ptdf", "a_gen", "a_load", "big_m", "d0",
    }
    missing = fields - set(payload)
    if missing:
        raise ValueError(f"case file missing fields: {sorted(missing)}")
    return GridCase(
        n_bus=int(payload["n_bus"]),
        n_gen=int(payload["n_gen"]),
        n_load=int(payload["n_load"]),
        n_line=int(payload["n_line"]),
        c=payload["c"],
        p_min=payload["p_min"],
        p_max=payload["p_max"],
        f_min=payload["f_min"],
        f_max=payload["f_max"],
        ptdf=payload["ptdf"],
        a_gen=payload["a_gen"],
        a_load=payload["a_load"],
        big_m=float(payload["big_m"]),
        d0=payload["d0"],
    )
