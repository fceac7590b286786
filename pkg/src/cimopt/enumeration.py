"""Pre-enumerated tile-size and loop-bound candidate sets.

The optimization model cannot multiply loop bounds, so every data size a
mapping can realize is enumerated up front: one candidate per distinct
combination of per-dimension factor subsets.  A one-hot selection inside
the model then picks the row matching the mapped factors, with the match
expressed as a linear equation over scaled logarithms.

Input tiles are special: the stored footprint covers the convolution halo,
so their element count uses the exact input extent ((oy-1)*stride + fy)
while the log-domain bookkeeping stays on the loop factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iter_product

from .arch import ArchSpec
from .errors import EnumerationError
from .workload import DIMS, FactorSet, LayerShape

#: Fixed-point scale for logarithms inside the model (natural log * 1e6).
LOG_SCALE = 10 ** 6
#: Two-sided slack, in scaled-log units, of the bound-matching equations.
LOG_SLACK = 5

DEFAULT_CANDIDATE_CAP = 4096

_LOOP_DIMS = {
    "W": ("K", "C", "FY", "FX"),
    "O": ("B", "K", "OY", "OX"),
    "I": ("B", "C", "OY", "OX", "FY", "FX"),
}


def slog(value: int) -> int:
    """Scaled integer logarithm used by all log-domain constraints."""
    if value < 1:
        raise EnumerationError(f"slog of non-positive value {value}")
    return round(math.log(value) * LOG_SCALE)


def relevant_dims(operand: str) -> set:
    """Tensor index set of an operand; input spatial extents are derived."""
    return {
        "W": {"K", "C", "FY", "FX"},
        "O": {"B", "K", "OY", "OX"},
        "I": {"B", "C", "IY", "IX"},
    }[operand]


def operand_loop_dims(operand: str) -> tuple:
    """Loop dimensions whose factors shape an operand's tiles.

    For inputs this is the six-dimensional set feeding the derived IY/IX
    extents; for weights and outputs it is their own four index dims.
    """
    return _LOOP_DIMS[operand]


def tile_elements(operand: str, layer: LayerShape, bounds: dict) -> int:
    """Elements of an operand tile given per-dimension loop bounds.

    `bounds` maps every loop dim of the operand to a bound (missing dims
    default to 1).  Inputs use the halo-corrected spatial extents.
    """
    get = lambda d: bounds.get(d, 1)
    if operand == "W":
        return get("K") * get("C") * get("FY") * get("FX")
    if operand == "O":
        return get("B") * get("K") * get("OY") * get("OX")
    iy = layer.input_extent_y(get("OY"), get("FY"))
    ix = layer.input_extent_x(get("OX"), get("FX"))
    return get("B") * get("C") * iy * ix


@dataclass(frozen=True)
class TileCandidate:
    """One realizable tile: loop bounds per dimension plus element count.

    For W and O, elements is exactly the product of the bounds; for I it is
    the halo-corrected footprint of the same bounds.
    """

    elements: int
    bounds: dict

    def bounds_key(self, dims: tuple) -> tuple:
        return tuple(self.bounds.get(d, 1) for d in dims)

    def log_bound(self, d: str) -> int:
        b = self.bounds.get(d, 1)
        return slog(b) if b > 1 else 0


def _subset_products(values: tuple) -> list:
    """Distinct products over all subsets of a factor list, ascending."""
    prods = {1}
    for v in values:
        prods |= {p * v for p in prods}
    return sorted(prods)


def _per_dim_bound_choices(factors: FactorSet, dims: tuple) -> list:
    return [_subset_products(factors.factors[d]) for d in dims]


def enumerate_candidates(factors: FactorSet, arch: ArchSpec, operand: str,
                         m: int, layer: LayerShape,
                         cap: int = DEFAULT_CANDIDATE_CAP) -> list:
    """All tile candidates of `operand` at memory level `m`.

    Every combination of per-dimension factor-subset products appears once
    (deduplicated on the bounds vector).  Rows whose stored footprint can
    never fit the level's capacity are dropped, except the all-ones and
    full-bound rows which anchor the selection for unused levels.
    """
    dims = operand_loop_dims(operand)
    choices = _per_dim_bound_choices(factors, dims)
    count = 1
    for c in choices:
        count *= len(c)
    if count > cap:
        raise EnumerationError(
            f"{count} tile candidates for operand {operand} at level {m} exceed the cap "
            f"of {cap}; tighten the factorization config (fewer factors per dimension)")
    precision = layer.precision(operand)
    capacity = arch.levels[m].capacity_bits
    full = tuple(factors.bound(d) for d in dims)
    rows = []
    for combo in iter_product(*choices):
        bounds = {d: b for d, b in zip(dims, combo)}
        elems = tile_elements(operand, layer, bounds)
        keep = (elems * precision <= capacity
                or all(b == 1 for b in combo) or combo == full)
        if keep:
            rows.append(TileCandidate(elements=elems, bounds=bounds))
    rows.sort(key=lambda tc: (tc.elements, tc.bounds_key(dims)))
    return rows


@dataclass(frozen=True)
class CandidateTable:
    """Per-(level, operand) tile candidates plus the loop-count domain.

    `rows[(m, operand)]` exists only when the level admits the operand.
    `count_domain` lists the admissible per-slot loop counts: every distinct
    factor value plus 1 (the count of an inactive slot).
    """

    layer: LayerShape
    factors: FactorSet
    rows: dict
    count_domain: tuple

    def row_list(self, m: int, operand: str) -> tuple:
        return self.rows[(m, operand)]

    def has(self, m: int, operand: str) -> bool:
        return (m, operand) in self.rows

    def find_row(self, m: int, operand: str, bounds: dict):
        """Index of the row matching a bounds vector, or None."""
        dims = operand_loop_dims(operand)
        key = tuple(bounds.get(d, 1) for d in dims)
        for idx, cand in enumerate(self.rows[(m, operand)]):
            if cand.bounds_key(dims) == key:
                return idx
        return None


def build_candidate_table(layer: LayerShape, factors: FactorSet, arch: ArchSpec,
                          cap: int = DEFAULT_CANDIDATE_CAP) -> CandidateTable:
    rows = {}
    for lv in arch.levels:
        for operand in sorted(lv.operands):
            rows[(lv.index, operand)] = tuple(
                enumerate_candidates(factors, arch, operand, lv.index, layer, cap))
    values = sorted({val for _, _, val in factors.entries()})
    return CandidateTable(layer=layer, factors=factors, rows=rows,
                          count_domain=tuple([1] + values))
