"""Tile-candidate enumeration and its log-domain bookkeeping."""

import math
import random

import pytest

from cimopt.enumeration import (LOG_SCALE, LOG_SLACK, build_candidate_table,
                                enumerate_candidates, operand_loop_dims,
                                relevant_dims, slog, tile_elements)
from cimopt.errors import EnumerationError
from cimopt.workload import FactorSet

from conftest import make_arch, make_layer


class TestRelevantDims:
    def test_weight(self):
        assert relevant_dims("W") == {"K", "C", "FY", "FX"}

    def test_output(self):
        assert relevant_dims("O") == {"B", "K", "OY", "OX"}

    def test_input_derived_spatial(self):
        assert relevant_dims("I") == {"B", "C", "IY", "IX"}
        # 1x1 conv at stride 1: input spatial extent equals output bound
        layer = make_layer(OY=7, OX=7)
        assert layer.input_extent_y(7, 1) == 7

    def test_loop_dims(self):
        assert operand_loop_dims("I") == ("B", "C", "OY", "OX", "FY", "FX")


class TestEnumerate:
    def test_weight_two_dims(self, arch2):
        layer = make_layer(K=2, C=3)
        factors = FactorSet({"K": [2], "C": [3]})
        rows = enumerate_candidates(factors, arch2, "W", 0, layer)
        keys = {(r.bounds["K"], r.bounds["C"]): r.elements for r in rows}
        assert keys == {(1, 1): 1, (1, 3): 3, (2, 1): 2, (2, 3): 6}
        assert [r.elements for r in rows] == sorted(r.elements for r in rows)

    def test_all_empty_factors(self, arch2):
        layer = make_layer()
        factors = FactorSet({})
        rows = enumerate_candidates(factors, arch2, "W", 0, layer)
        assert len(rows) == 1 and rows[0].elements == 1

    def test_input_halo(self, arch2):
        layer = make_layer(OY=4, FY=3)
        factors = FactorSet({"OY": [2, 2], "FY": [3]})
        rows = enumerate_candidates(factors, arch2, "I", 0, layer)
        full = [r for r in rows if r.bounds["OY"] == 4 and r.bounds["FY"] == 3]
        assert full[0].elements == (4 - 1) * 1 + 3
        # cross-check against the direct convolution index range
        touched = {oy * 1 + fy for oy in range(4) for fy in range(3)}
        assert full[0].elements == len(touched)

    def test_cap_explosion(self, arch2):
        # distinct primes give 2^7 = 128 distinct subset products
        layer = make_layer(K=2 * 3 * 5 * 7 * 11 * 13 * 17)
        factors = FactorSet({"K": [2, 3, 5, 7, 11, 13, 17]})
        with pytest.raises(EnumerationError, match="cap"):
            enumerate_candidates(factors, arch2, "W", 0, layer, cap=100)

    def test_capacity_pruning_keeps_anchors(self):
        arch = make_arch([("dram", 10 ** 9, 8, False), ("tiny", 40, 8, False)])
        layer = make_layer(K=8, C=4)
        factors = FactorSet({"K": [2, 2, 2], "C": [2, 2]})
        rows = enumerate_candidates(factors, arch, "W", 1, layer)
        elems = [r.elements for r in rows]
        assert 1 in elems                    # unit anchor
        assert 32 in elems                   # full bound retained
        assert all(e * 8 <= 40 or e in (1, 32) for e in elems)


class TestLogConsistency:
    def test_product_dims_match_elements(self, arch2):
        layer = make_layer(K=6, C=4, OY=2)
        factors = FactorSet({"K": [2, 3], "C": [2, 2], "OY": [2]})
        for operand in ("W", "O"):
            rows = enumerate_candidates(factors, arch2, operand, 0, layer)
            for r in rows:
                prod = 1
                for d in operand_loop_dims(operand):
                    prod *= r.bounds.get(d, 1)
                assert prod == r.elements
                total = sum(r.log_bound(d) for d in operand_loop_dims(operand))
                assert abs(total - slog(max(r.elements, 1))) <= LOG_SLACK

    def test_input_elements_exact_halo(self, arch2):
        layer = make_layer(OY=4, OX=2, FY=3, FX=2, C=2, stride_y=2)
        factors = FactorSet({"OY": [2, 2], "OX": [2], "FY": [3], "FX": [2], "C": [2]})
        rows = enumerate_candidates(factors, arch2, "I", 0, layer)
        for r in rows:
            iy = layer.input_extent_y(r.bounds["OY"], r.bounds["FY"])
            ix = layer.input_extent_x(r.bounds["OX"], r.bounds["FX"])
            assert r.elements == r.bounds["B"] * r.bounds["C"] * iy * ix

    def test_slog_distinguishes_distinct_products(self):
        # candidates below the dimension-bound guard differ by far more than
        # the matching slack
        values = sorted({a * b for a in range(1, 100) for b in range(1, 100)})
        for x, y in zip(values, values[1:]):
            assert slog(y) - slog(x) > 2 * LOG_SLACK


class TestClosure:
    def test_random_assignments_are_enumerated(self, arch2):
        """Any legal split of factors across levels lands on a candidate row."""
        rng = random.Random(11)
        layer = make_layer(K=8, C=6, OY=2)
        factors = FactorSet({"K": [2, 2, 2], "C": [2, 3], "OY": [2]})
        table = build_candidate_table(layer, factors, arch2)
        for _ in range(100):
            for operand in ("I", "W", "O"):
                bounds = {}
                for d in operand_loop_dims(operand):
                    prod = 1
                    for (dd, f, val) in factors.entries():
                        if dd == d and rng.random() < 0.5:
                            prod *= val
                    bounds[d] = prod
                elems = tile_elements(operand, layer, bounds)
                if elems * layer.precision(operand) > arch2.levels[1].capacity_bits:
                    continue
                assert table.find_row(1, operand, bounds) is not None
