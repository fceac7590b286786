"""Reference mappers: oracle behavior, WS pinning, heuristic reproducibility."""

import pytest

from cimopt.baselines import (BaselineConfig, exhaustive_best, heuristic_search,
                              iter_legal_mappings, space_size_bound, ws_constrained)
from cimopt.enumeration import build_candidate_table
from cimopt.errors import CimoptError
from cimopt.latency import evaluate
from cimopt.mapping import decode_solution, verify_mapping
from cimopt.mipbuild import ObjectiveWeights, build_model
from cimopt.solve import SolveConfig, solve_builtin
from cimopt.workload import FactorSet

from conftest import make_arch, make_layer


class TestExhaustive:
    def test_single_factor_single_level(self):
        arch = make_arch([("mem", 10 ** 9, 8, False)])
        layer = make_layer(K=2)
        factors = FactorSet({"K": [2]})
        table = build_candidate_table(layer, factors, arch)
        sr = exhaustive_best(factors, arch, table)
        assert sr.evaluated <= 4
        assert sr.report.total_latency == arch.macro.mvm_cycles(8) * 2

    def test_empty_factor_set_single_mapping(self):
        arch = make_arch([("mem", 10 ** 9, 8, False)])
        layer = make_layer()
        factors = FactorSet({})
        table = build_candidate_table(layer, factors, arch)
        sr = exhaustive_best(factors, arch, table)
        assert sr.evaluated == 1
        assert sr.report.total_latency == arch.macro.mvm_cycles(8)

    def test_cap_exceeded_reports_size(self):
        arch = make_arch([("dram", 10 ** 9, 8, False), ("buf", 4096, 16, True)])
        layer = make_layer(K=64, C=64)
        factors = FactorSet({"K": [2, 2, 2, 2, 2, 2], "C": [2, 2, 2, 2, 2, 2]})
        table = build_candidate_table(layer, factors, arch)
        with pytest.raises(CimoptError, match="exceeds the exhaustive cap"):
            exhaustive_best(factors, arch, table, cap=1000)

    def test_every_enumerated_mapping_verifies(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        count = 0
        for mapping in iter_legal_mappings(toy_factors, arch2, toy_layer):
            assert verify_mapping(mapping, toy_factors, arch2, table) == []
            count += 1
            if count >= 200:
                break
        assert count > 0


class TestWeightStationary:
    def _pipeline(self, arch, layer, factors, locality=0):
        table = build_candidate_table(layer, factors, arch)
        model, ctx = build_model(layer, factors, arch, table,
                                 ObjectiveWeights(latency=1, locality=locality))
        return table, model, ctx

    def test_ws_objective_dominates(self, arch3):
        layer = make_layer(K=4, C=2)
        factors = FactorSet({"K": [2, 2], "C": [2]})
        table, model, ctx = self._pipeline(arch3, layer, factors)
        free = solve_builtin(model, SolveConfig(time_limit_s=120))
        ws = solve_builtin(ws_constrained(model, ctx), SolveConfig(time_limit_s=120))
        assert free.status == ws.status == "optimal"
        assert ws.objective >= free.objective

    def test_ws_pins_weights_to_deepest_level(self, arch3):
        layer = make_layer(K=4, C=2)
        factors = FactorSet({"K": [2, 2], "C": [2]})
        table, model, ctx = self._pipeline(arch3, layer, factors)
        ws_model = ws_constrained(model, ctx)
        res = solve_builtin(ws_model, SolveConfig(time_limit_s=120))
        mapping = decode_solution(ws_model, ctx, res.values)
        deepest = max(ctx.adm_levels["W"])
        for (op, m), members in mapping.blocks.items():
            if op == "W" and members:
                assert m == deepest

    def test_oversized_weights_need_reload_rounds(self):
        """Weights beyond the deepest level's capacity force the fallback."""
        arch = make_arch([("dram", 10 ** 9, 8, False), ("gb", 8192, 16, True),
                          ("spad", 128, 8, True)])
        layer = make_layer(K=8, C=4)     # 256 weight bits > 128-bit spad
        factors = FactorSet({"K": [2, 4], "C": [4]})
        table, model, ctx = self._pipeline(arch, layer, factors)
        strict = solve_builtin(ws_constrained(model, ctx),
                               SolveConfig(time_limit_s=120))
        assert strict.status == "infeasible"
        relaxed_model = ws_constrained(model, ctx, allow_reload=True)
        relaxed = solve_builtin(relaxed_model, SolveConfig(time_limit_s=120))
        assert relaxed.status == "optimal"
        mapping = decode_solution(relaxed_model, ctx, relaxed.values)
        reload_levels = {m for (op, m), mem in mapping.blocks.items()
                         if op == "W" and mem and m != max(ctx.adm_levels["W"])}
        assert reload_levels == {1}
        # the reload level stays single-buffered for weights
        assert not mapping.dbuf.get((1, "W"))


class TestHeuristic:
    def test_single_sample_is_legal(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        sr = heuristic_search(toy_factors, arch2, table,
                              BaselineConfig(mode="heuristic",
                                             heuristic_samples=1, seed=3))
        assert verify_mapping(sr.mapping, toy_factors, arch2, table) == []

    def test_best_of_n_monotone_for_fixed_schedule(self, arch2, toy_layer,
                                                   toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        latencies = []
        for n in (1, 3, 6, 12):
            sr = heuristic_search(toy_factors, arch2, table,
                                  BaselineConfig(mode="heuristic",
                                                 heuristic_samples=n, seed=3))
            latencies.append(sr.report.total_latency)
        assert latencies == sorted(latencies, reverse=True) or \
            all(a >= b for a, b in zip(latencies, latencies[1:]))

    def test_reproducible_per_seed(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        cfg = BaselineConfig(mode="heuristic", heuristic_samples=5, seed=11)
        a = heuristic_search(toy_factors, arch2, table, cfg)
        b = heuristic_search(toy_factors, arch2, table, cfg)
        assert a.report.total_latency == b.report.total_latency
        assert a.mapping.to_json_dict() == b.mapping.to_json_dict()

    def test_oracle_sandwich(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        oracle = exhaustive_best(toy_factors, arch2, table)
        heur = heuristic_search(toy_factors, arch2, table,
                                BaselineConfig(mode="heuristic",
                                               heuristic_samples=50, seed=0))
        worst = max(evaluate(m, toy_factors, arch2).total_latency
                    for m in iter_legal_mappings(toy_factors, arch2, toy_layer))
        assert oracle.report.total_latency <= heur.report.total_latency <= worst

    def test_heuristic_near_oracle_on_toy(self, arch2, toy_layer, toy_factors):
        table = build_candidate_table(toy_layer, toy_factors, arch2)
        oracle = exhaustive_best(toy_factors, arch2, table)
        heur = heuristic_search(toy_factors, arch2, table,
                                BaselineConfig(mode="heuristic",
                                               heuristic_samples=200, seed=1))
        assert heur.report.total_latency <= 1.10 * oracle.report.total_latency


def test_space_size_bound_counts(arch2, toy_factors):
    bound = space_size_bound(toy_factors, arch2)
    assert bound > 0
    layer = make_layer("toy", K=4, C=2)
    exact = sum(1 for _ in iter_legal_mappings(toy_factors, arch2, layer))
    assert exact <= bound
