"""Decoding, auditing and re-encoding of concrete mappings."""

import random

import pytest

from cimopt.baselines import build_mapping, iter_legal_mappings
from cimopt.enumeration import build_candidate_table
from cimopt.errors import DecodeError
from cimopt.mapping import (Mapping, decode_solution, re_encode,
                            structural_assignment, verify_mapping)
from cimopt.mipbuild import ObjectiveWeights, build_model
from cimopt.solve import SolveConfig, solve_builtin
from cimopt.workload import FactorSet

from conftest import make_arch, make_layer


@pytest.fixture
def solved(arch2, toy_layer, toy_factors):
    table = build_candidate_table(toy_layer, toy_factors, arch2)
    model, ctx = build_model(toy_layer, toy_factors, arch2, table,
                             ObjectiveWeights(latency=1, locality=0))
    res = solve_builtin(model, SolveConfig(time_limit_s=60))
    assert res.status == "optimal"
    return arch2, toy_layer, toy_factors, table, model, ctx, res


class TestDecode:
    def test_decode_produces_verified_mapping(self, solved):
        arch, layer, factors, table, model, ctx, res = solved
        mapping = decode_solution(model, ctx, res.values)
        assert verify_mapping(mapping, factors, arch, table) == []
        assert mapping.predicted["lmax"] == res.objective

    def test_decode_refuses_violating_assignment(self, solved):
        arch, layer, factors, table, model, ctx, res = solved
        values = list(res.values)
        # break the uniqueness family: place a factor twice
        for i in range(ctx.n_slots):
            values[ctx.tplace[("K", 0, i)]] = 1
        with pytest.raises(DecodeError, match="eq"):
            decode_solution(model, ctx, values)

    def test_re_encode_closure(self, solved):
        arch, layer, factors, table, model, ctx, res = solved
        mapping = decode_solution(model, ctx, res.values)
        values = re_encode(mapping, model, ctx)
        assert model.check_assignment(values) == []
        # structural variables agree exactly
        for vidx in list(ctx.tplace.values()) + list(ctx.splace.values()) \
                + list(ctx.mplace.values()) + list(ctx.edge.values()):
            assert values[vidx] == res.values[vidx]
        again = decode_solution(model, ctx, values)
        assert again.temporal == mapping.temporal
        assert again.blocks == mapping.blocks


class TestVerify:
    def test_capacity_violation_detected(self):
        arch = make_arch([("dram", 10 ** 9, 8, False), ("buf", 64, 8, True)])
        layer = make_layer(K=16)
        factors = FactorSet({"K": [4, 4]})
        table = build_candidate_table(layer, factors, arch)
        mapping = build_mapping(layer, arch, [("K", 0, 4), ("K", 1, 4)], [],
                                {op: [1, 1] for op in ("I", "W", "O")}, {})
        # 16 weights + 16 outputs at 8 bits overflow the 64-bit buffer
        violations = verify_mapping(mapping, factors, arch, table)
        assert any("capacity" in v for v in violations)

    def test_double_buffer_overflow_detected(self):
        arch = make_arch([("dram", 10 ** 9, 8, False), ("buf", 300, 8, True),
                          ("inner", 8192, 8, False)])
        layer = make_layer(K=16)
        factors = FactorSet({"K": [4, 4]})
        table = build_candidate_table(layer, factors, arch)
        base = build_mapping(layer, arch, [("K", 0, 4), ("K", 1, 4)], [],
                             {"I": [0, 0], "W": [1, 2], "O": [0, 0]}, {})
        assert verify_mapping(base, factors, arch, table) == []
        doubled = build_mapping(layer, arch, [("K", 0, 4), ("K", 1, 4)], [],
                                {"I": [1, 1], "W": [1, 1], "O": [1, 1]},
                                {(1, "I"): True, (1, "W"): True, (1, "O"): True})
        violations = verify_mapping(doubled, factors, arch, table)
        assert any("capacity" in v for v in violations)

    def test_random_perturbations_flag_real_violations(self, solved):
        """Perturbed mappings either stay legal or get a named violation that
        the model-side re-encoding confirms."""
        arch, layer, factors, table, model, ctx, res = solved
        mapping = decode_solution(model, ctx, res.values)
        rng = random.Random(9)
        from cimopt.solve import SolveError, min_completion
        for _ in range(100):
            kind = rng.choice(["slot", "level", "dbuf", "drop_edge"])
            temporal = list(mapping.temporal)
            blocks = {k: list(v) for k, v in mapping.blocks.items()}
            dbuf = dict(mapping.dbuf)
            paths = {k: list(v) for k, v in mapping.paths.items()}
            if kind == "slot" and temporal:
                i = rng.randrange(len(temporal))
                slot, d, f, val = temporal[i]
                temporal[i] = (rng.randrange(ctx.n_slots), d, f, val)
            elif kind == "level" and blocks:
                key = rng.choice(sorted(blocks))
                if blocks[key]:
                    entry = blocks[key].pop()
                    newm = rng.randrange(arch.n_levels)
                    blocks.setdefault((key[0], newm), []).append(entry)
            elif kind == "dbuf":
                m = rng.randrange(arch.n_levels)
                op = rng.choice(["I", "W", "O"])
                dbuf[(m, op)] = True
            elif kind == "drop_edge" and paths:
                op = rng.choice(sorted(paths))
                if paths[op]:
                    paths[op].pop()
            cand = Mapping(layer=mapping.layer,
                           temporal=tuple(sorted(set(temporal))),
                           spatial=mapping.spatial,
                           blocks={k: tuple(sorted(v)) for k, v in blocks.items()
                                   if v},
                           dbuf={k: v for k, v in dbuf.items() if v},
                           paths={k: tuple(v) for k, v in paths.items()},
                           sizes=mapping.sizes, predicted={})
            violations = verify_mapping(cand, factors, arch, table)
            if violations:
                assert all(isinstance(v, str) and v for v in violations)
                continue
            # audit passed: the model must accept its re-encoding too
            values = min_completion(model, structural_assignment(cand, ctx))
            assert model.check_assignment(values) == []


def test_mapping_json_round_shape(solved):
    arch, layer, factors, table, model, ctx, res = solved
    mapping = decode_solution(model, ctx, res.values)
    doc = mapping.to_json_dict()
    assert doc["layer"] == layer.name
    assert {b["operand"] for b in doc["blocks"]} <= {"I", "W", "O"}
    assert isinstance(doc["predicted"]["lmax"], int)
