"""Solver tests: brute force oracle, branch and bound, greedy, lineage."""
from __future__ import annotations

import numpy as np
import pytest
from support import random_graph, random_instance, strict_gap_graph

from lineage_ilp.io import validate_tracks
from lineage_ilp.solve import (
    IlpInstance,
    LinearConstraint,
    _derive_implied,
    _GroupBound,
    _Propagator,
    check_solution,
    extract_lineage,
    formulate,
    instance_from_json,
    instance_to_json,
    load_instance,
    objective_value,
    save_instance,
    solve,
    solve_bruteforce,
    solve_greedy,
)


class TestConstraintValidation:
    def test_bad_sense(self):
        with pytest.raises(ValueError):
            LinearConstraint((0,), (1,), ">=", 0)

    def test_bad_coeff(self):
        with pytest.raises(ValueError):
            LinearConstraint((0, 1), (1, 2), "<=", 1)

    def test_duplicate_index(self):
        with pytest.raises(ValueError):
            LinearConstraint((0, 0), (1, 1), "<=", 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            LinearConstraint((), (), "<=", 1)

    def test_instance_checks_range(self):
        with pytest.raises(ValueError):
            IlpInstance(np.zeros(2), [LinearConstraint((5,), (1,), "<=", 1)])


class TestBruteForce:
    def test_conflict_picks_cheaper(self):
        inst = IlpInstance(
            np.array([-1.0, -2.0]), [LinearConstraint((0, 1), (1, 1), "<=", 1)]
        )
        res = solve_bruteforce(inst)
        assert res.status == "optimal"
        assert res.objective == -2.0
        np.testing.assert_array_equal(res.x, [0, 1])

    def test_unconstrained_selects_negatives(self):
        inst = IlpInstance(np.array([-1.0, 2.0, -0.5]), [])
        res = solve_bruteforce(inst)
        np.testing.assert_array_equal(res.x, [1, 0, 1])
        assert res.objective == -1.5

    def test_tie_prefers_lexicographically_smallest(self):
        inst = IlpInstance(
            np.array([-1.0, -1.0]), [LinearConstraint((0, 1), (1, 1), "<=", 1)]
        )
        res = solve_bruteforce(inst)
        np.testing.assert_array_equal(res.x, [1, 0])

    def test_infeasible(self):
        cons = [
            LinearConstraint((0,), (1,), "==", 1),
            LinearConstraint((1,), (1,), "==", 1),
            LinearConstraint((0, 1), (1, 1), "<=", 1),
        ]
        res = solve_bruteforce(IlpInstance(np.zeros(2), cons))
        assert res.status == "infeasible"
        assert res.x is None

    def test_refuses_large_instances(self):
        with pytest.raises(ValueError):
            solve_bruteforce(IlpInstance(np.zeros(25), []))

    def test_chunking_matches_single_pass(self):
        rng = np.random.default_rng(0)
        inst = random_instance(rng, max_vars=18)
        a = solve_bruteforce(inst, chunk_bits=7)
        b = solve_bruteforce(inst, chunk_bits=20)
        assert a.objective == b.objective
        np.testing.assert_array_equal(a.x, b.x)


class TestCheckSolution:
    def test_reports_violations(self):
        inst = IlpInstance(
            np.zeros(2),
            [
                LinearConstraint((0, 1), (1, 1), "<=", 1),
                LinearConstraint((0, 1), (1, -1), "==", 0),
            ],
        )
        assert check_solution(inst, np.array([0, 0])) == []
        v = check_solution(inst, np.array([1, 0]))
        assert len(v) == 1 and "constraint 1" in v[0]
        v = check_solution(inst, np.array([1, 1]))
        assert len(v) == 1 and "constraint 0" in v[0]
        assert check_solution(inst, np.array([2, 0]))
        assert check_solution(inst, np.array([1]))

    def test_objective_value(self):
        inst = IlpInstance(np.array([1.5, -2.0]), [])
        assert objective_value(inst, np.array([1, 1])) == -0.5


class TestPropagation:
    def test_equality_forces_remaining(self):
        cons = [LinearConstraint((0, 1, 2), (1, 1, -1), "==", 0)]
        prop = _Propagator(cons, 3)
        fixed = np.array([0, -1, 1], dtype=np.int8)
        assert prop.run(fixed, [0])
        assert fixed[1] == 1

    def test_conflict_pair_propagates(self):
        cons = [LinearConstraint((0, 1), (1, 1), "<=", 1)]
        prop = _Propagator(cons, 2)
        fixed = np.array([1, -1], dtype=np.int8)
        assert prop.run(fixed, [0])
        assert fixed[1] == 0

    def test_detects_infeasible(self):
        cons = [LinearConstraint((0, 1), (1, 1), "<=", 1)]
        prop = _Propagator(cons, 2)
        fixed = np.array([1, 1], dtype=np.int8)
        assert not prop.run(fixed, [0])

    def test_chain_reaction(self):
        cons = [
            LinearConstraint((0, 1), (1, -1), "==", 0),
            LinearConstraint((1, 2), (1, -1), "==", 0),
        ]
        prop = _Propagator(cons, 3)
        fixed = np.array([1, -1, -1], dtype=np.int8)
        assert prop.run(fixed, [0])
        np.testing.assert_array_equal(fixed, [1, 1, 1])


class TestDerivedConstraints:
    def test_out_equality_derived(self):
        cons = [
            LinearConstraint((1, 2, 0), (1, 1, -1), "==", 0),
            LinearConstraint((1, 2, 3, 4), (1, 1, -1, -1), "==", 0),
        ]
        derived = _derive_implied(cons)
        assert len(derived) == 1
        d = derived[0]
        assert set(zip(d.indices, d.coeffs)) == {(3, 1), (4, 1), (0, -1)}
        assert d.sense == "==" and d.rhs == 0

    def test_no_match_no_derivation(self):
        cons = [
            LinearConstraint((1, 2, 0), (1, 1, -1), "==", 0),
            LinearConstraint((1, 3, 4), (1, -1, -1), "==", 0),
        ]
        assert _derive_implied(cons) == []


class TestGroupBound:
    def test_sound_against_bruteforce(self):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            inst = random_instance(rng, max_vars=14)
            n = inst.n_vars
            derived = _derive_implied(inst.constraints)
            bounder = _GroupBound(inst, derived)
            prop = _Propagator(list(inst.constraints) + derived, n)
            fixed = np.full(n, -1, dtype=np.int8)
            for v in rng.choice(n, size=rng.integers(0, n // 2 + 1), replace=False):
                fixed[v] = rng.integers(0, 2)
            if not prop.run(fixed, range(len(prop.idx))):
                continue
            bound = bounder.bound(fixed)
            best = _restricted_optimum(inst, fixed)
            if best is None:
                continue
            assert bound <= best + 1e-9, f"seed {seed}: bound {bound} > best {best}"

    def test_dominates_flat_bound_on_tracking_instance(self):
        g = random_graph(np.random.default_rng(3))
        inst, _ = formulate(g)
        bounder = _GroupBound(inst, _derive_implied(inst.constraints))
        root = np.full(inst.n_vars, -1, dtype=np.int8)
        flat = float(np.minimum(inst.costs, 0.0).sum())
        assert bounder.bound(root) >= flat - 1e-12


def _restricted_optimum(inst: IlpInstance, fixed: np.ndarray) -> float | None:
    """Brute-force optimum among completions of a partial assignment."""
    n = inst.n_vars
    best = None
    for code in range(1 << n):
        x = np.array([(code >> k) & 1 for k in range(n)], dtype=np.int8)
        if ((fixed != -1) & (x != fixed)).any():
            continue
        if check_solution(inst, x):
            continue
        val = objective_value(inst, x)
        if best is None or val < best:
            best = val
    return best


class TestSolveMatchesBruteForce:
    def test_random_instances(self):
        for seed in range(150):
            rng = np.random.default_rng(seed)
            inst = random_instance(rng, max_vars=16)
            exact = solve(inst)
            brute = solve_bruteforce(inst)
            assert exact.status == brute.status == "optimal", f"seed {seed}"
            assert exact.objective == pytest.approx(brute.objective, abs=1e-9), (
                f"seed {seed}"
            )
            assert check_solution(inst, exact.x) == []

    def test_deterministic(self):
        inst = random_instance(np.random.default_rng(77), max_vars=16)
        a = solve(inst)
        b = solve(inst)
        np.testing.assert_array_equal(a.x, b.x)
        assert a.objective == b.objective
        assert a.nodes == b.nodes

    def test_infeasible_instance(self):
        cons = [
            LinearConstraint((0,), (1,), "==", 1),
            LinearConstraint((1,), (1,), "==", 1),
            LinearConstraint((0, 1), (1, 1), "<=", 1),
        ]
        res = solve(IlpInstance(np.zeros(2), cons))
        assert res.status == "infeasible"

    def test_flow_toy(self):
        # enter - node = 0 and enter - exit = 0; selecting all three is -2
        costs = np.array([-3.0, 0.5, 0.5])
        cons = [
            LinearConstraint((1, 0), (1, -1), "==", 0),
            LinearConstraint((1, 2), (1, -1), "==", 0),
        ]
        res = solve(IlpInstance(costs, cons))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(-2.0)
        np.testing.assert_array_equal(res.x, [1, 1, 1])

    def test_gap_tolerance_stops_early(self):
        inst = random_instance(np.random.default_rng(5), max_vars=16)
        exact = solve(inst)
        loose = solve(inst, gap_tolerance=100.0)
        assert loose.objective >= exact.objective - 1e-9
        assert loose.gap is not None

    def test_node_limit(self):
        inst = random_instance(np.random.default_rng(11), max_vars=16)
        res = solve(inst, max_nodes=1)
        assert res.status in ("feasible", "optimal", "unknown")

    def test_time_limit_zero_returns_quickly(self):
        inst = random_instance(np.random.default_rng(13), max_vars=16)
        res = solve(inst, time_limit=0.0)
        assert res.timed_out
        if res.x is not None:
            assert check_solution(inst, res.x) == []


class TestOnRandomGraphs:
    def test_exact_greedy_and_checker(self):
        for seed in range(40):
            g = random_graph(np.random.default_rng(seed))
            inst, vm = formulate(g)
            assert inst.n_vars <= 24
            brute = solve_bruteforce(inst)
            exact = solve(inst)
            greedy = solve_greedy(g, vm)
            assert exact.objective == pytest.approx(brute.objective, abs=1e-9), (
                f"seed {seed}"
            )
            assert check_solution(inst, exact.x) == []
            assert check_solution(inst, greedy.x) == []
            assert greedy.objective >= brute.objective - 1e-9, f"seed {seed}"


class TestStrictGapFixture:
    def test_exact_beats_greedy(self):
        g = strict_gap_graph()
        inst, vm = formulate(g)
        exact = solve(inst)
        greedy = solve_greedy(g, vm)
        brute = solve_bruteforce(inst)
        assert brute.objective == pytest.approx(-15.7)
        assert exact.objective == pytest.approx(-15.7)
        assert greedy.objective == pytest.approx(-12.6)
        assert check_solution(inst, greedy.x) == []

    def test_lineages(self):
        g = strict_gap_graph()
        inst, vm = formulate(g)
        exact = solve(inst)
        lin = extract_lineage(g, vm, exact.x)
        assert len(lin.tracks) == 3
        validate_tracks(lin.tracks)
        assert lin.end_reason[1] == "division"
        assert lin.members[1] == [0]
        assert {lin.tracks[1].parent, lin.tracks[2].parent} == {1}
        assert sorted([lin.members[2], lin.members[3]]) == [[1], [2]]

        greedy = solve_greedy(g, vm)
        glin = extract_lineage(g, vm, greedy.x)
        assert len(glin.tracks) == 2
        assert glin.members[1] == [0, 1]
        assert glin.end_reason[1] == "exit"
        assert glin.members[2] == [2]

    def test_extract_rejects_inconsistent_selection(self):
        g = strict_gap_graph()
        inst, vm = formulate(g)
        x = np.zeros(inst.n_vars, dtype=np.int8)
        x[vm.node_var[0]] = 1  # selected proposal with no incoming edge
        with pytest.raises(ValueError):
            extract_lineage(g, vm, x)


class TestInstanceSerialization:
    def test_roundtrip(self, tmp_path):
        inst = random_instance(np.random.default_rng(21), max_vars=12)
        obj = instance_to_json(inst)
        back = instance_from_json(obj)
        np.testing.assert_array_equal(back.costs, inst.costs)
        assert back.constraints == inst.constraints
        path = tmp_path / "instance.json"
        save_instance(inst, path)
        loaded = load_instance(path)
        assert loaded.constraints == inst.constraints
        np.testing.assert_array_equal(loaded.costs, inst.costs)
