import json

import numpy as np
import pytest

from gapcal.dispatch import (
    GridCase,
    build_case,
    case_from_dict,
    case_to_dict,
    compute_ptdf,
    dual_objective,
    dual_residuals,
    load_rng,
    primal_objective,
    primal_residuals,
    sample_loads,
    solve_dispatch,
)
from gapcal.proxies import dual_recover


def one_bus_case():
    """Two generators on a single bus, no lines: the merit-order toy case."""
    return GridCase(
        n_bus=1, n_gen=2, n_load=1, n_line=0,
        c=[1.0, 2.0], p_min=[0.0, 0.0], p_max=[2.0, 2.0],
        f_min=np.zeros(0), f_max=np.zeros(0),
        ptdf=np.zeros((0, 1)),
        a_gen=[[1.0, 1.0]], a_load=[[1.0]],
        big_m=200.0, d0=[3.0],
    )


class TestComputePtdf:
    def test_two_bus(self):
        ptdf = compute_ptdf([(0, 1)], [7.5], 2, slack_bus=0)
        assert np.allclose(ptdf, [[0.0, -1.0]], atol=0)

    def test_slack_column_zero(self):
        rng = np.random.default_rng(0)
        edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
        ptdf = compute_ptdf(edges, rng.uniform(1, 10, 5), 4, slack_bus=2)
        assert np.all(ptdf[:, 2] == 0.0)

    def test_three_bus_ring_hand_solution(self):
        # equal susceptances; reduced 2x2 system solved by hand gives the
        # classic thirds pattern
        ptdf = compute_ptdf([(0, 1), (1, 2), (2, 0)], [3.0, 3.0, 3.0], 3, slack_bus=0)
        want = np.array(
            [
                [0.0, -2.0 / 3.0, -1.0 / 3.0],
                [0.0, 1.0 / 3.0, -1.0 / 3.0],
                [0.0, 1.0 / 3.0, 2.0 / 3.0],
            ]
        )
        assert np.allclose(ptdf, want, atol=1e-12)

    def test_slack_invariance_on_balanced_injections(self):
        rng = np.random.default_rng(5)
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]
        sus = rng.uniform(2, 12, len(edges))
        ptdfs = [compute_ptdf(edges, sus, 5, slack_bus=s) for s in range(5)]
        for _ in range(20):
            inj = rng.normal(0, 10, 5)
            inj -= inj.mean()  # balanced
            flows = [p @ inj for p in ptdfs]
            for f in flows[1:]:
                assert np.allclose(f, flows[0], atol=1e-9)

    def test_disconnected_errors(self):
        with pytest.raises(ValueError, match="disconnected"):
            compute_ptdf([(0, 1)], [5.0], 4)

    def test_bad_branch(self):
        with pytest.raises(ValueError):
            compute_ptdf([(0, 0)], [5.0], 2)


class TestBuildCase:
    def test_determinism(self):
        a = build_case(6, topology="ring", seed=9)
        b = build_case(6, topology="ring", seed=9)
        assert json.dumps(case_to_dict(a), sort_keys=True) == json.dumps(
            case_to_dict(b), sort_keys=True
        )

    def test_nominal_load_feasible_without_violation(self):
        for topology in ("ring", "star", "tree"):
            case = build_case(7, topology=topology, seed=3)
            primal, _ = solve_dispatch(case, case.d0)
            assert float(primal.xi.max(initial=0.0)) <= 1e-9

    def test_sizing_rule(self):
        case = build_case(9, topology="tree", seed=4)
        assert case.p_max.sum() >= 1.2 * case.d0.sum() - 1e-9

    def test_min_buses(self):
        with pytest.raises(ValueError, match="2 buses"):
            build_case(1)

    def test_unknown_topology(self):
        with pytest.raises(ValueError, match="topology"):
            build_case(4, topology="mesh")

    def test_roundtrip_serialization(self):
        case = build_case(5, topology="star", seed=8)
        clone = case_from_dict(json.loads(json.dumps(case_to_dict(case))))
        for name in ("c", "p_min", "p_max", "f_min", "f_max", "ptdf", "a_gen", "a_load", "d0"):
            assert np.array_equal(getattr(case, name), getattr(clone, name))
        assert clone.big_m == case.big_m

    def test_missing_field_rejected(self):
        payload = case_to_dict(build_case(4, seed=1))
        payload.pop("ptdf")
        with pytest.raises(ValueError, match="missing"):
            case_from_dict(payload)


class TestSampleLoads:
    def test_degenerate_ranges_reproduce_nominal(self):
        case = build_case(6, seed=2)
        ls = sample_loads(case, (1.0, 1.0), (1.0, 1.0), rng=np.random.default_rng(0))
        assert np.array_equal(ls.d, case.d0)

    def test_factor_identity(self):
        case = build_case(6, seed=2)
        ls = sample_loads(case, rng=np.random.default_rng(3))
        assert np.array_equal(ls.d, ls.alpha_factor * ls.beta_factors * case.d0)

    def test_global_factor_mean(self):
        case = build_case(4, seed=2)
        rng = np.random.default_rng(11)
        n = 20000
        alphas = [sample_loads(case, rng=rng).alpha_factor for _ in range(n)]
        # Uniform(0.6, 1.0): mean 0.8, sd 0.4/sqrt(12)
        margin = 3.0 * (0.4 / np.sqrt(12.0)) / np.sqrt(n)
        assert abs(float(np.mean(alphas)) - 0.8) < margin

    def test_per_index_stream_is_order_independent(self):
        case = build_case(5, seed=7)
        a = sample_loads(case, rng=load_rng(42, 3))
        _ = sample_loads(case, rng=load_rng(42, 9))
        b = sample_loads(case, rng=load_rng(42, 3))
        assert np.array_equal(a.d, b.d)

    def test_bad_ranges(self):
        case = build_case(4, seed=1)
        with pytest.raises(ValueError):
            sample_loads(case, (0.0, 1.0), (0.85, 1.15), rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_loads(case, rng=None)


class TestSolveDispatch:
    def test_one_bus_merit_order_by_hand(self):
        case = one_bus_case()
        primal, dual = solve_dispatch(case, np.array([3.0]))
        assert np.allclose(primal.p, [2.0, 1.0])
        assert primal.objective == pytest.approx(4.0, abs=1e-9)
        assert dual.lam == pytest.approx(2.0, abs=1e-9)
        # z = c - lam = (-1, 0): first generator at its upper bound
        assert np.allclose(dual.z_hi, [1.0, 0.0], atol=1e-9)
        assert np.allclose(dual.z_lo, [0.0, 0.0], atol=1e-9)
        assert dual.objective == pytest.approx(4.0, abs=1e-9)

    def test_zero_demand(self):
        case = one_bus_case()
        primal, _ = solve_dispatch(case, np.array([0.0]))
        assert np.allclose(primal.p, 0.0)
        assert primal.objective == 0.0

    def test_infeasible_demand(self):
        case = one_bus_case()
        with pytest.raises(ValueError, match="infeasible demand"):
            solve_dispatch(case, np.array([10.0]))

    def test_random_instances_strong_duality_and_feasibility(self):
        case = build_case(6, topology="ring", seed=3, n_gen=4)
        scale = max(
            1.0, case.big_m, float(case.p_max.max()), float(case.f_max.max())
        )
        for i in range(60):
            ls = sample_loads(case, rng=load_rng(77, i))
            primal, dual = solve_dispatch(case, ls.d)
            gap = abs(primal.objective - dual.objective)
            assert gap <= 1e-7 * max(1.0, abs(primal.objective))
            for name, val in primal_residuals(case, ls.d, primal).items():
                assert val <= 1e-8 * scale, f"primal {name} residual {val}"
            for name, val in dual_residuals(case, dual).items():
                assert val <= 1e-8 * scale, f"dual {name} residual {val}"

    def test_objective_helpers(self):
        case = one_bus_case()
        assert primal_objective(case, np.array([2.0, 1.0]), np.zeros(0)) == 4.0
        zero_dual = dual_recover(case, np.array([0.0]), 0.0, np.zeros(0))
        assert dual_objective(case, np.array([0.0]), zero_dual) == 0.0

    def test_weak_duality_for_perturbed_duals(self):
        case = build_case(6, topology="ring", seed=3, n_gen=4)
        rng = np.random.default_rng(13)
        for i in range(25):
            ls = sample_loads(case, rng=load_rng(31, i))
            primal, dual = solve_dispatch(case, ls.d)
            lam = dual.lam + float(rng.normal(0, 20))
            pi = dual.pi + rng.normal(0, 20, case.n_line)
            recovered = dual_recover(case, ls.d, lam, pi)
            assert recovered.objective <= primal.objective + 1e-8 * max(
                1.0, abs(primal.objective)
            )


class TestGridCaseValidation:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError, match="p_min"):
            GridCase(
                n_bus=1, n_gen=1, n_load=1, n_line=0,
                c=[1.0], p_min=[2.0], p_max=[1.0],
                f_min=np.zeros(0), f_max=np.zeros(0), ptdf=np.zeros((0, 1)),
                a_gen=[[1.0]], a_load=[[1.0]], big_m=10.0, d0=[1.0],
            )

    def test_rejects_small_penalty(self):
        with pytest.raises(ValueError, match="big_m"):
            GridCase(
                n_bus=1, n_gen=1, n_load=1, n_line=0,
                c=[10.0], p_min=[0.0], p_max=[1.0],
                f_min=np.zeros(0), f_max=np.zeros(0), ptdf=np.zeros((0, 1)),
                a_gen=[[1.0]], a_load=[[1.0]], big_m=5.0, d0=[1.0],
            )

    def test_rejects_bad_incidence(self):
        with pytest.raises(ValueError, match="a_gen"):
            GridCase(
                n_bus=2, n_gen=1, n_load=1, n_line=0,
                c=[1.0], p_min=[0.0], p_max=[1.0],
                f_min=np.zeros(0), f_max=np.zeros(0), ptdf=np.zeros((0, 2)),
                a_gen=[[1.0], [1.0]], a_load=[[1.0], [0.0]], big_m=10.0, d0=[1.0],
            )
