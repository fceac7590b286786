"""Builtin solver behavior, external adapter, cross-backend agreement."""

import shutil
import sys
from fractions import Fraction

import pytest

from cimopt.baselines import exhaustive_best
from cimopt.enumeration import build_candidate_table
from cimopt.errors import SolveError
from cimopt.mipbuild import ObjectiveWeights, build_model
from cimopt.mipmodel import EQ, GE, LE, MipModel
from cimopt.solve import (SolveConfig, SolveResult, min_completion, solve,
                          solve_builtin)
from cimopt.workload import FactorSet

from conftest import make_arch, make_layer


class TestBuiltinBasics:
    def test_one_hot_index_objective(self):
        model = MipModel()
        vs = [model.add_binary(f"v{k}") for k in range(3)]
        model.add_exactly_one("pick", vs)
        model.set_objective({vs[1]: Fraction(1), vs[2]: Fraction(2)})
        res = solve_builtin(model, SolveConfig(time_limit_s=10))
        assert res.status == "optimal"
        assert res.objective == 0
        assert res.values[vs[0]] == 1

    def test_infeasible_detected(self):
        model = MipModel()
        x = model.add_binary("x")
        model.add_constr("a", [(x, 1)], GE, 1)
        model.add_constr("b", [(x, 1)], LE, 0)
        res = solve_builtin(model, SolveConfig(time_limit_s=10))
        assert res.status == "infeasible"

    def test_capacity_infeasible_toy(self):
        # smallest candidate cannot fit: infeasibility diagnosed by solving
        arch = make_arch([("dram", 10 ** 9, 8, False),
                          {"name": "buf", "capacity_bits": 8,
                           "bus_width_bits": 8, "operands": ["I", "W", "O"],
                           "double_buffer": False, "bypassable": False,
                           "read_energy_pj": 1.0, "write_energy_pj": 1.0}])
        layer = make_layer(K=4, a_bits=16, w_bits=16, o_bits=16)
        factors = FactorSet({"K": [2, 2]})
        table = build_candidate_table(layer, factors, arch)
        model, ctx = build_model(layer, factors, arch, table,
                                 ObjectiveWeights(latency=1, locality=0))
        res = solve_builtin(model, SolveConfig(time_limit_s=30))
        # non-bypassable empty buffer blocks every path to the compute port
        assert res.status == "infeasible"

    def test_optimality_vs_exhaustive_binary_space(self):
        """Builtin matches brute force over every binary combination."""
        import itertools
        model = MipModel()
        vs = [model.add_binary(f"b{k}") for k in range(10)]
        model.add_constr("c1", [(vs[0], 3), (vs[1], 5), (vs[2], 7)], LE, 9)
        model.add_constr("c2", [(vs[3], 1), (vs[4], 1), (vs[5], 1)], GE, 2)
        model.add_constr("c3", [(vs[6], 2), (vs[7], -3)], GE, -1)
        coeffs = [3, -2, 5, 1, -4, 2, -1, 6, -3, 2]
        model.set_objective({v: Fraction(c) for v, c in zip(vs, coeffs)})
        res = solve_builtin(model, SolveConfig(time_limit_s=30))
        best = None
        for combo in itertools.product((0, 1), repeat=10):
            if model.check_assignment(list(combo)):
                continue
            obj = model.eval_objective(list(combo))
            if best is None or obj < best:
                best = obj
        assert res.status == "optimal" and res.objective == best

    def test_determinism(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table)
        r1 = solve_builtin(model, SolveConfig(time_limit_s=60))
        r2 = solve_builtin(model, SolveConfig(time_limit_s=60))
        assert r1.status == r2.status == "optimal"
        assert r1.objective == r2.objective
        assert r1.values == r2.values
        assert r1.nodes == r2.nodes

    def test_warm_start_accepts_and_prunes(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table)
        base = solve_builtin(model, SolveConfig(time_limit_s=60))
        warm = solve_builtin(model, SolveConfig(time_limit_s=60),
                             warm_values=base.values)
        assert warm.objective == base.objective
        with pytest.raises(SolveError):
            bad = list(base.values)
            bad[ctx.lmax] = -1
            solve_builtin(model, SolveConfig(time_limit_s=10), warm_values=bad)

    def test_solver_rechecks_solutions(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table)
        res = solve(model, SolveConfig(time_limit_s=60))
        assert res.status == "optimal"
        assert model.check_assignment(res.values) == []

    def test_toy_objective_matches_oracle(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table,
                                 ObjectiveWeights(latency=1, locality=0))
        res = solve_builtin(model, SolveConfig(time_limit_s=60))
        oracle = exhaustive_best(toy_factors, arch2, table)
        assert res.objective == oracle.report.total_latency


class TestMinCompletion:
    def test_rejects_partial_nondetermining_fix(self):
        model = MipModel()
        a = model.add_binary("a")
        b = model.add_binary("b")
        model.add_constr("c", [(a, 1), (b, 1)], LE, 2)
        with pytest.raises(SolveError, match="undetermined"):
            min_completion(model, {a: 1})

    def test_monotone_chain_least_fixpoint(self):
        model = MipModel()
        b = model.add_binary("b")
        x = model.add_int("x", 0, 100)
        y = model.add_int("y", 0, 100)
        model.add_constr("c1", [(x, 1)], GE, 7, conds=[(b, 1)])
        model.add_constr("c2", [(y, 1), (x, -2)], GE, 3)
        values = min_completion(model, {b: 1})
        assert values[x] == 7 and values[y] == 17
        values = min_completion(model, {b: 0})
        assert values[x] == 0 and values[y] == 3


class TestExternal:
    def test_unreachable_command_is_clean_error(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table)
        cfg = SolveConfig(backend="external", time_limit_s=10,
                          external_command="definitely_missing_solver_xyz {mps} {sol}")
        with pytest.raises(SolveError, match="not found"):
            solve(model, cfg)

    def test_missing_command_is_error(self):
        model = MipModel()
        model.add_binary("x")
        cfg = SolveConfig(backend="external", time_limit_s=10)
        with pytest.raises(SolveError, match="no solver command"):
            solve(model, cfg)

    def test_self_round_trip_matches_builtin(self, arch2, toy_layer, toy_factors):
        """The package acting as its own external solver agrees exactly."""
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        model, ctx = build_model(toy_layer, toy_factors, arch2, table,
                                 ObjectiveWeights(latency=1, locality=0))
        builtin = solve_builtin(model, SolveConfig(time_limit_s=60))
        cmd = f"{sys.executable} -m cimopt.cli solve-mps {{mps}} {{sol}}"
        res = solve(model, SolveConfig(backend="external", time_limit_s=120,
                                       external_command=cmd))
        assert res.status == "optimal"
        assert res.objective == builtin.objective

    def test_time_limit_validation(self):
        with pytest.raises(SolveError):
            SolveConfig(time_limit_s=0)
