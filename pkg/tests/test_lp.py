import itertools
import math

import numpy as np
import pytest

from gapcal.lp import lp_solve


def brute_force_lp(c, a, b, lower, upper):
    """Vertex enumeration oracle for small bounded LPs.

    Enumerates every choice of basic columns and every lower/upper assignment
    of the nonbasic ones, keeps feasible points, and returns the best
    objective. Assumes all bounds finite.
    """
    c = np.asarray(c, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    m, n = a.shape
    best = None
    for basic in itertools.combinations(range(n), m):
        a_b = a[:, basic]
        if abs(np.linalg.det(a_b)) < 1e-10:
            continue
        nonbasic = [j for j in range(n) if j not in basic]
        for pattern in itertools.product((0, 1), repeat=len(nonbasic)):
            x = np.zeros(n)
            for j, at_upper in zip(nonbasic, pattern):
                x[j] = upper[j] if at_upper else lower[j]
            rhs = b - a[:, nonbasic] @ x[nonbasic] if nonbasic else b
            x[list(basic)] = np.linalg.solve(a_b, rhs)
            if np.any(x < lower - 1e-9) or np.any(x > upper + 1e-9):
                continue
            val = float(c @ x)
            if best is None or val < best:
                best = val
    return best


class TestTrivial:
    def test_min_on_box(self):
        res = lp_solve([1.0], lower=[1.0], upper=[2.0])
        assert res.status == "optimal"
        assert res.x[0] == 1.0 and res.objective == 1.0

    def test_crossed_bounds_infeasible(self):
        assert lp_solve([1.0], lower=[2.0], upper=[1.0]).status == "infeasible"

    def test_merit_order(self):
        res = lp_solve(
            [1.0, 2.0], a_eq=[[1.0, 1.0]], b_eq=[3.0], lower=[0.0, 0.0], upper=[2.0, 2.0]
        )
        assert res.status == "optimal"
        assert np.allclose(res.x, [2.0, 1.0])
        assert res.objective == pytest.approx(4.0, abs=1e-12)
        # the marginal generator prices the constraint
        assert res.duals[0] == pytest.approx(2.0, abs=1e-12)
        # reduced cost of the generator at its upper bound is c1 - dual
        assert res.reduced_costs[0] == pytest.approx(-1.0, abs=1e-12)

    def test_unbounded(self):
        assert lp_solve([-1.0]).status == "unbounded"
        assert lp_solve([0.0, -1.0], a_eq=[[1.0, 0.0]], b_eq=[1.0]).status == "unbounded"

    def test_equality_infeasible(self):
        res = lp_solve(
            [1.0, 1.0], a_eq=[[1.0, 1.0]], b_eq=[10.0], lower=[0.0, 0.0], upper=[1.0, 1.0]
        )
        assert res.status == "infeasible"

    def test_fixed_variable(self):
        res = lp_solve(
            [1.0, 1.0], a_eq=[[1.0, 1.0]], b_eq=[3.0], lower=[2.0, 0.0], upper=[2.0, 5.0]
        )
        assert res.status == "optimal"
        assert np.allclose(res.x, [2.0, 1.0])

    def test_free_variable(self):
        res = lp_solve([1.0, 0.0], a_eq=[[1.0, 1.0]], b_eq=[5.0], lower=[0.0, -np.inf])
        assert res.status == "optimal"
        assert res.x[0] == 0.0 and res.x[1] == 5.0


class TestDegenerate:
    def test_degenerate_ties_terminate(self):
        # multiple identical rows of blocking variables; Bland must not cycle
        res = lp_solve(
            [1.0, 1.0, 1.0],
            a_eq=[[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]],
            b_eq=[1.0, 1.0],
            lower=[0.0, 0.0, 0.0],
            upper=[1.0, 1.0, 1.0],
        )
        assert res.status == "optimal"
        assert res.objective == pytest.approx(1.0, abs=1e-9)


class TestRandomAgainstBruteForce:
    def test_batch(self):
        rng = np.random.default_rng(123)
        solved = 0
        for trial in range(60):
            m, n = 2, 5
            a = rng.normal(0, 1, (m, n))
            lower = rng.uniform(-2, 0, n)
            upper = lower + rng.uniform(0.5, 3, n)
            x_inner = lower + (upper - lower) * rng.uniform(0.2, 0.8, n)
            b = a @ x_inner  # guarantees feasibility
            c = rng.normal(0, 1, n)
            res = lp_solve(c, a, b, lower, upper)
            assert res.status == "optimal", f"trial {trial}"
            want = brute_force_lp(c, a, b, lower, upper)
            assert res.objective == pytest.approx(want, abs=1e-7)
            # dual certificate: c - A'y must match reduced costs, and the
            # sign pattern must price the active bounds
            y = res.duals
            z = c - a.T @ y
            assert np.allclose(z, res.reduced_costs, atol=1e-8)
            at_lower = np.abs(res.x - lower) < 1e-9
            at_upper = np.abs(res.x - upper) < 1e-9
            interior = ~(at_lower | at_upper)
            assert np.all(z[interior & (np.abs(z) > 1e-7)] == 0.0) or np.all(
                np.abs(z[interior]) < 1e-7
            )
            solved += 1
        assert solved == 60

    def test_strong_duality_identity(self):
        rng = np.random.default_rng(321)
        for _ in range(30):
            m, n = 3, 7
            a = rng.normal(0, 1, (m, n))
            lower = np.zeros(n)
            upper = rng.uniform(1, 4, n)
            b = a @ (upper * rng.uniform(0.2, 0.8, n))
            c = rng.normal(0, 1, n)
            res = lp_solve(c, a, b, lower, upper)
            assert res.status == "optimal"
            z = res.reduced_costs
            dual_obj = float(
                res.duals @ b
                + np.minimum(z, 0.0) @ upper
                + np.maximum(z, 0.0) @ lower
            )
            assert dual_obj == pytest.approx(res.objective, abs=1e-7)


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            lp_solve([1.0, 2.0], a_eq=[[1.0]], b_eq=[1.0])
        with pytest.raises(ValueError):
            lp_solve([1.0], lower=[0.0, 1.0])
