"""DNN layers as loop nests, and tiling-factor reduction.

A convolution layer is a seven-dimensional loop nest (batch B, output
channels K, input channels C, output spatial OY/OX, filter spatial FY/FX).
Every loop bound is decomposed into a small multiset of tiling factors; the
mapping stage later assigns each factor to a temporal slot or a spatial
axis.  Working from the raw prime factorization makes the mapping space
explode, so bounds are compacted by greedily merging factor pairs while a
partition-based flexibility score stays within a relative-loss budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .errors import WorkloadError

DIMS = ("B", "K", "C", "OY", "OX", "FY", "FX")
OPERANDS = ("I", "W", "O")

_LAYER_FIELDS = (
    "name", "B", "K", "C", "OY", "OX", "FY", "FX",
    "stride_y", "stride_x", "w_bits", "a_bits", "o_bits",
)

#: Longest factor list the partition enumerator accepts.  Bigger lists are
#: pre-merged (smallest factors first) before scoring.
DEFAULT_PARTITION_CAP = 8


def _to_fraction(value) -> Fraction:
    """Exact rational from int/float/str; floats go through their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class LayerShape:
    """Shape of one convolution layer (matmuls use FY=FX=OY=OX=1)."""

    name: str
    dims: dict
    stride_y: int = 1
    stride_x: int = 1
    w_bits: int = 8
    a_bits: int = 8
    o_bits: int = 8

    def __post_init__(self):
        missing = [d for d in DIMS if d not in self.dims]
        if missing:
            raise WorkloadError(f"layer {self.name!r}: missing dims {missing}")
        extra = [d for d in self.dims if d not in DIMS]
        if extra:
            raise WorkloadError(f"layer {self.name!r}: unknown dims {extra}")
        for d, bound in self.dims.items():
            if not isinstance(bound, int) or bound < 1:
                raise WorkloadError(
                    f"layer {self.name!r}: dim {d} bound {bound!r} must be a positive integer")
        for label, s in (("stride_y", self.stride_y), ("stride_x", self.stride_x)):
            if not isinstance(s, int) or s < 1:
                raise WorkloadError(f"layer {self.name!r}: {label} must be >= 1")
        for label, bits in (("w_bits", self.w_bits), ("a_bits", self.a_bits),
                            ("o_bits", self.o_bits)):
            if not isinstance(bits, int) or not 1 <= bits <= 64:
                raise WorkloadError(f"layer {self.name!r}: {label} must be in 1..64")

    def precision(self, operand: str) -> int:
        """Bits per element of operand I, W, or O."""
        return {"I": self.a_bits, "W": self.w_bits, "O": self.o_bits}[operand]

    def input_extent_y(self, oy: int, fy: int) -> int:
        """Input rows covered by a tile producing `oy` outputs with `fy` taps."""
        return (oy - 1) * self.stride_y + fy

    def input_extent_x(self, ox: int, fx: int) -> int:
        return (ox - 1) * self.stride_x + fx

    def macs(self) -> int:
        total = 1
        for d in DIMS:
            total *= self.dims[d]
        return total

    def to_json_dict(self) -> dict:
        out = {"name": self.name}
        out.update({d: self.dims[d] for d in DIMS})
        out.update({"stride_y": self.stride_y, "stride_x": self.stride_x,
                    "w_bits": self.w_bits, "a_bits": self.a_bits, "o_bits": self.o_bits})
        return out


@dataclass(frozen=True)
class FactorizationConfig:
    """Controls of the factor-merging pass.

    k_min is the target factor count per dimension, alpha the relative
    score loss tolerated per merge, and flex_weights the three strictly
    decreasing positive weights of the 1/2/3-way partition counts.
    """

    k_min: int = 3
    alpha: Fraction = Fraction(1, 20)
    flex_weights: tuple = (Fraction(1), Fraction(1, 2), Fraction(1, 4))

    def __post_init__(self):
        if self.k_min < 1:
            raise WorkloadError("k_min must be >= 1")
        alpha = _to_fraction(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not 0 <= alpha <= 1:
            raise WorkloadError("alpha must lie in [0, 1]")
        weights = tuple(_to_fraction(w) for w in self.flex_weights)
        object.__setattr__(self, "flex_weights", weights)
        if len(weights) != 3 or any(w <= 0 for w in weights):
            raise WorkloadError("flex_weights must be three positive values")
        if not weights[0] > weights[1] > weights[2]:
            raise WorkloadError("flex_weights must be strictly decreasing")


@dataclass(frozen=True)
class FactorSet:
    """Per-dimension tiling factors; a dimension of bound 1 has an empty list."""

    factors: dict

    def __post_init__(self):
        for d, fs in self.factors.items():
            if d not in DIMS:
                raise WorkloadError(f"factor set: unknown dim {d!r}")
            if any(f < 2 for f in fs):
                raise WorkloadError(f"factor set: dim {d} has factor < 2")
        object.__setattr__(self, "factors",
                           {d: tuple(self.factors.get(d, ())) for d in DIMS})

    def bound(self, d: str) -> int:
        prod = 1
        for f in self.factors[d]:
            prod *= f
        return prod

    def entries(self):
        """All (dim, index, value) factor identities, dim order then index."""
        out = []
        for d in DIMS:
            for idx, val in enumerate(self.factors[d]):
                out.append((d, idx, val))
        return out

    def total_count(self) -> int:
        return sum(len(self.factors[d]) for d in DIMS)


def prime_factors(n: int) -> list:
    """Prime factorization in ascending order; 1 gives the empty list."""
    if n < 1:
        raise WorkloadError(f"cannot factorize {n}")
    out = []
    rem = n
    p = 2
    while p * p <= rem:
        while rem % p == 0:
            out.append(p)
            rem //= p
        p += 1 if p == 2 else 2
    if rem > 1:
        out.append(rem)
    return out


def _partition_product_tuples(values):
    """Distinct sorted product-tuples of all partitions into 1..3 subsets.

    Returns three sets, one per subset count.  Partitions are enumerated by
    assigning each element either to an existing block or to a fresh block
    (at most three blocks), which visits every set partition exactly once;
    duplicate factor values collapse through the sorted product tuples.
    """
    by_k = (set(), set(), set())

    def recurse(idx, blocks):
        if idx == len(values):
            if blocks:
                by_k[len(blocks) - 1].add(tuple(sorted(blocks)))
            return
        v = values[idx]
        for b in range(len(blocks)):
            blocks[b] *= v
            recurse(idx + 1, blocks)
            blocks[b] //= v
        if len(blocks) < 3:
            blocks.append(v)
            recurse(idx + 1, blocks)
            blocks.pop()

    recurse(0, [])
    return by_k


def flex_score(factors: Iterable[int], weights, partition_cap: int = DEFAULT_PARTITION_CAP) -> Fraction:
    """Weighted count of distinct 1/2/3-way partitions of a factor multiset.

    Raises WorkloadError when the list exceeds `partition_cap`, signalling
    that the caller has to pre-merge before scoring.
    """
    factors = list(factors)
    if any(f < 2 for f in factors):
        raise WorkloadError("flex_score requires factors >= 2")
    if len(factors) > partition_cap:
        raise WorkloadError(
            f"factor list of length {len(factors)} exceeds partition cap {partition_cap}")
    weights = tuple(_to_fraction(w) for w in weights)
    p1, p2, p3 = _partition_product_tuples(factors)
    return weights[0] * len(p1) + weights[1] * len(p2) + weights[2] * len(p3)


def _premerge(factors: list, cap: int) -> list:
    """Merge the two smallest factors until the list fits the partition cap."""
    out = sorted(factors)
    while len(out) > cap:
        merged = out[0] * out[1]
        out = sorted(out[2:] + [merged])
    return out


def flexible_factorization(n: int, cfg: FactorizationConfig,
                           partition_cap: int = DEFAULT_PARTITION_CAP) -> list:
    """Compact the prime factorization of `n` by greedy minimum-loss merging.

    Starting from the primes (pre-merged down to `partition_cap` entries if
    needed), repeatedly merges the factor pair whose score loss relative to
    the starting score is smallest, preferring the smallest merged value and
    then the earliest index pair on ties.  Stops at `cfg.k_min` factors or
    as soon as the best available merge loses more than `cfg.alpha`.
    """
    factors = prime_factors(n)
    if len(factors) <= cfg.k_min:
        return factors
    factors = _premerge(factors, partition_cap)
    cache: dict = {}

    def score(fs):
        key = tuple(fs)
        if key not in cache:
            cache[key] = flex_score(fs, cfg.flex_weights, partition_cap)
        return cache[key]

    score_full = score(factors)
    assert score_full > 0, "non-empty factor lists always admit one partition"
    while len(factors) > cfg.k_min:
        score_base = score(factors)
        best_key = None
        best_list = None
        for i in range(len(factors)):
            for j in range(i + 1, len(factors)):
                merged_value = factors[i] * factors[j]
                candidate = sorted(
                    factors[:i] + factors[i + 1:j] + factors[j + 1:] + [merged_value])
                delta = (score_base - score(candidate)) / score_full
                key = (delta, merged_value, (i, j))
                if best_key is None or key < best_key:
                    best_key = key
                    best_list = candidate
        if best_key[0] > cfg.alpha:
            break
        factors = best_list
    return factors


def factorize_layer(layer: LayerShape, cfg: FactorizationConfig,
                    partition_cap: int = DEFAULT_PARTITION_CAP) -> FactorSet:
    """Run flexible factorization on every dimension of a layer."""
    return FactorSet({d: flexible_factorization(layer.dims[d], cfg, partition_cap)
                      for d in DIMS if layer.dims[d] > 1})


def layer_from_json_dict(rec: dict) -> LayerShape:
    if not isinstance(rec, dict):
        raise WorkloadError(f"layer record must be an object, got {type(rec).__name__}")
    unknown = sorted(set(rec) - set(_LAYER_FIELDS))
    if unknown:
        raise WorkloadError(f"layer record has unknown fields {unknown}")
    missing = [f for f in _LAYER_FIELDS if f not in rec]
    if missing:
        raise WorkloadError(f"layer record missing fields {missing}")
    if not isinstance(rec["name"], str) or not rec["name"]:
        raise WorkloadError("layer name must be a non-empty string")
    return LayerShape(
        name=rec["name"],
        dims={d: rec[d] for d in DIMS},
        stride_y=rec["stride_y"], stride_x=rec["stride_x"],
        w_bits=rec["w_bits"], a_bits=rec["a_bits"], o_bits=rec["o_bits"],
    )


def load_workload(path) -> list:
    """Load a workload file: {"layers": [...]} with exactly the known fields."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise WorkloadError(f"cannot read workload file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"workload file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"layers"}:
        raise WorkloadError("workload document must be an object with a single 'layers' key")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise WorkloadError("'layers' must be a non-empty array")
    layers = [layer_from_json_dict(rec) for rec in doc["layers"]]
    names = [l.name for l in layers]
    if len(set(names)) != len(names):
        raise WorkloadError("duplicate layer names in workload")
    return layers
