"""Declarative description of a multi-core CIM accelerator.

The accelerator is a chain of memory levels indexed from 0 (off-chip) with
larger indices sitting closer to the CIM macros, a set of spatial axes
(cores, macro wordlines/bitlines) each tied to the deepest level whose
stored data it multiplies, and the macro compute parameters.  Everything is
immutable after load and validated up front so downstream modules never
re-check structure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

from .errors import ArchError
from .workload import DIMS, OPERANDS

_LEVEL_FIELDS = ("index", "name", "capacity_bits", "bus_width_bits", "operands",
                 "double_buffer", "bypassable", "read_energy_pj", "write_energy_pj")
_AXIS_FIELDS = ("name", "size", "dims", "attach_level")
_MACRO_FIELDS = ("rows", "cols", "mvm_latency_cycles", "serial_bits", "mvm_energy_pj")


@dataclass(frozen=True)
class MemoryLevel:
    """One storage level; `operands` lists what it may hold."""

    index: int
    name: str
    capacity_bits: int
    bus_width_bits: int
    operands: frozenset
    double_buffer: bool
    bypassable: bool
    read_energy_pj: Optional[float] = None
    write_energy_pj: Optional[float] = None

    def admits(self, operand: str) -> bool:
        return operand in self.operands


@dataclass(frozen=True)
class SpatialAxis:
    """A parallel hardware axis; loops unrolled on it run concurrently.

    `attach_level` is the deepest memory level whose stored data size is
    multiplied by this axis (that level and everything above it hold one
    copy per axis element; deeper levels are private to an element).
    """

    index: int
    name: str
    size: int
    dims: frozenset
    attach_level: int

    def allows(self, dim: str) -> bool:
        return dim in self.dims

    def multiplies_level(self, m: int) -> bool:
        return self.attach_level >= m


@dataclass(frozen=True)
class MacroSpec:
    """CIM macro array geometry and compute timing."""

    rows: int
    cols: int
    mvm_latency_cycles: int
    serial_bits: int
    mvm_energy_pj: Optional[float] = None

    def mvm_cycles(self, activation_bits: int) -> int:
        """Cycles of one full MVM: per-pass latency times bit-serial passes."""
        return self.mvm_latency_cycles * math.ceil(activation_bits / self.serial_bits)


@dataclass(frozen=True)
class ArchSpec:
    levels: tuple
    axes: tuple
    macro: MacroSpec
    clock_ns: float

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def sink(self) -> int:
        """Virtual compute-port index one past the deepest level."""
        return len(self.levels)

    @property
    def last_level(self) -> int:
        """Deepest real level; its outgoing accesses are in-situ (free)."""
        return len(self.levels) - 1

    def level(self, m: int) -> MemoryLevel:
        return self.levels[m]

    def to_json_dict(self) -> dict:
        return {
            "levels": [
                {
                    "index": lv.index, "name": lv.name,
                    "capacity_bits": lv.capacity_bits,
                    "bus_width_bits": lv.bus_width_bits,
                    "operands": sorted(lv.operands),
                    "double_buffer": lv.double_buffer,
                    "bypassable": lv.bypassable,
                    "read_energy_pj": lv.read_energy_pj,
                    "write_energy_pj": lv.write_energy_pj,
                } for lv in self.levels
            ],
            "axes": [
                {"name": ax.name, "size": ax.size, "dims": sorted(ax.dims),
                 "attach_level": ax.attach_level} for ax in self.axes
            ],
            "macro": {
                "rows": self.macro.rows, "cols": self.macro.cols,
                "mvm_latency_cycles": self.macro.mvm_latency_cycles,
                "serial_bits": self.macro.serial_bits,
                "mvm_energy_pj": self.macro.mvm_energy_pj,
            },
            "clock_ns": self.clock_ns,
        }


def _require(cond: bool, message: str):
    if not cond:
        raise ArchError(message)


def _parse_level(rec: dict) -> MemoryLevel:
    _require(isinstance(rec, dict), "level record must be an object")
    unknown = sorted(set(rec) - set(_LEVEL_FIELDS))
    _require(not unknown, f"level record has unknown fields {unknown}")
    missing = [f for f in _LEVEL_FIELDS if f not in rec]
    _require(not missing, f"level record missing fields {missing}")
    name = rec["name"]
    _require(isinstance(rec["index"], int) and rec["index"] >= 0,
             f"level {name!r}: index must be a non-negative integer")
    _require(isinstance(rec["capacity_bits"], int) and rec["capacity_bits"] > 0,
             f"level {name!r}: capacity_bits must be a positive integer")
    _require(isinstance(rec["bus_width_bits"], int) and rec["bus_width_bits"] > 0,
             f"level {name!r}: bus_width_bits must be a positive integer")
    ops = rec["operands"]
    _require(isinstance(ops, list) and ops and all(o in OPERANDS for o in ops),
             f"level {name!r}: operands must be a non-empty subset of {list(OPERANDS)}")
    for key in ("read_energy_pj", "write_energy_pj"):
        _require(rec[key] is None or (isinstance(rec[key], (int, float)) and rec[key] >= 0),
                 f"level {name!r}: {key} must be null or a non-negative number")
    return MemoryLevel(
        index=rec["index"], name=name,
        capacity_bits=rec["capacity_bits"], bus_width_bits=rec["bus_width_bits"],
        operands=frozenset(ops),
        double_buffer=bool(rec["double_buffer"]), bypassable=bool(rec["bypassable"]),
        read_energy_pj=rec["read_energy_pj"], write_energy_pj=rec["write_energy_pj"],
    )


def _parse_axis(rec: dict, position: int) -> SpatialAxis:
    _require(isinstance(rec, dict), "axis record must be an object")
    unknown = sorted(set(rec) - set(_AXIS_FIELDS))
    _require(not unknown, f"axis record has unknown fields {unknown}")
    missing = [f for f in _AXIS_FIELDS if f not in rec]
    _require(not missing, f"axis record missing fields {missing}")
    name = rec["name"]
    _require(isinstance(rec["size"], int) and rec["size"] >= 1,
             f"axis {name!r}: size must be >= 1")
    dims = rec["dims"]
    _require(isinstance(dims, list) and dims and all(d in DIMS for d in dims),
             f"axis {name!r}: dims must be a non-empty subset of {list(DIMS)}")
    _require(isinstance(rec["attach_level"], int),
             f"axis {name!r}: attach_level must be an integer")
    return SpatialAxis(index=position, name=name, size=rec["size"],
                       dims=frozenset(dims), attach_level=rec["attach_level"])


def arch_from_json_dict(doc: dict) -> ArchSpec:
    _require(isinstance(doc, dict), "architecture document must be an object")
    unknown = sorted(set(doc) - {"levels", "axes", "macro", "clock_ns"})
    _require(not unknown, f"architecture document has unknown keys {unknown}")
    for key in ("levels", "axes", "macro", "clock_ns"):
        _require(key in doc, f"architecture document missing key {key!r}")
    _require(isinstance(doc["levels"], list) and doc["levels"], "levels must be a non-empty array")
    levels = sorted((_parse_level(rec) for rec in doc["levels"]), key=lambda lv: lv.index)
    _require([lv.index for lv in levels] == list(range(len(levels))),
             "level indices must be contiguous from 0")
    for lv in levels:
        _require(lv.capacity_bits >= lv.bus_width_bits,
                 f"level {lv.name!r}: capacity_bits smaller than bus_width_bits")
    _require(levels[0].operands == frozenset(OPERANDS),
             "level 0 (off-chip) must admit all operands")
    _require(not levels[0].bypassable, "level 0 (off-chip) must not be bypassable")

    _require(isinstance(doc["axes"], list), "axes must be an array")
    axes = tuple(_parse_axis(rec, i) for i, rec in enumerate(doc["axes"]))
    for ax in axes:
        _require(0 <= ax.attach_level < len(levels),
                 f"axis {ax.name!r}: attach_level {ax.attach_level} references no level")

    macro_rec = doc["macro"]
    _require(isinstance(macro_rec, dict), "macro must be an object")
    unknown = sorted(set(macro_rec) - set(_MACRO_FIELDS))
    _require(not unknown, f"macro has unknown fields {unknown}")
    missing = [f for f in _MACRO_FIELDS if f not in macro_rec]
    _require(not missing, f"macro missing fields {missing}")
    _require(isinstance(macro_rec["rows"], int) and macro_rec["rows"] >= 1,
             "macro rows must be >= 1")
    _require(isinstance(macro_rec["cols"], int) and macro_rec["cols"] >= 1,
             "macro cols must be >= 1")
    _require(isinstance(macro_rec["mvm_latency_cycles"], int) and macro_rec["mvm_latency_cycles"] >= 1,
             "macro mvm_latency_cycles must be >= 1")
    _require(isinstance(macro_rec["serial_bits"], int) and macro_rec["serial_bits"] >= 1,
             "macro serial_bits must be >= 1")
    _require(macro_rec["mvm_energy_pj"] is None
             or (isinstance(macro_rec["mvm_energy_pj"], (int, float))
                 and macro_rec["mvm_energy_pj"] >= 0),
             "macro mvm_energy_pj must be null or a non-negative number")
    macro = MacroSpec(rows=macro_rec["rows"], cols=macro_rec["cols"],
                      mvm_latency_cycles=macro_rec["mvm_latency_cycles"],
                      serial_bits=macro_rec["serial_bits"],
                      mvm_energy_pj=macro_rec["mvm_energy_pj"])

    clock = doc["clock_ns"]
    _require(isinstance(clock, (int, float)) and clock > 0, "clock_ns must be positive")
    return ArchSpec(levels=tuple(levels), axes=axes, macro=macro, clock_ns=float(clock))


def load_arch(path) -> ArchSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArchError(f"cannot read architecture file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArchError(f"architecture file {path} is not valid JSON: {exc}") from exc
    return arch_from_json_dict(doc)


def dump_arch(arch: ArchSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(arch.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def operand_path_candidates(arch: ArchSpec, operand: str) -> set:
    """Level pairs (m, m'), m < m', between which `operand` may move directly.

    Both endpoints must admit the operand.  A strictly intermediate level
    blocks the pair only when it admits the operand itself but offers no
    hardware bypass around its buffer; levels that never hold the operand
    live on a different datapath and are ignored.
    """
    admitting = [lv.index for lv in arch.levels if lv.admits(operand)]
    if not admitting:
        raise ArchError(f"operand {operand} is admitted by no memory level")
    pairs = set()
    for i, m in enumerate(admitting):
        for m2 in admitting[i + 1:]:
            blocked = any(arch.levels[mid].admits(operand) and not arch.levels[mid].bypassable
                          for mid in admitting if m < mid < m2)
            if not blocked:
                pairs.add((m, m2))
    return pairs


def path_pairs_with_sink(arch: ArchSpec, operand: str) -> set:
    """`operand_path_candidates` extended with edges into the compute port.

    The compute port (index = number of levels) is the virtual endpoint fed
    by the deepest used level of each operand; an edge (m, sink) exists when
    every operand-admitting level below m is bypassable.
    """
    pairs = set(operand_path_candidates(arch, operand))
    admitting = [lv.index for lv in arch.levels if lv.admits(operand)]
    for m in admitting:
        blocked = any(arch.levels[mid].admits(operand) and not arch.levels[mid].bypassable
                      for mid in admitting if mid > m)
        if not blocked:
            pairs.add((m, arch.sink))
    return pairs
