"""Stall-aware analytical latency, access-count, energy and EDP evaluation.

Works directly on a Mapping, bottom-up over the active temporal loops, with
no reference to the optimization model: this module is the independent
oracle the solver's cycle predictions are checked against.

Per-operand latency at a loop with count N, per-iteration critical path L,
transfer cycles T and inner-nest latency P follows the five-row
classification (I/W share rows, O has its own):

  no transfer          L*(N-1) + P
  single, I/W          L*(N-2) + 2T + P              (N >= 2)
  single, O            L*(N-1) + 2T + P
  double, I/W          max(L*(N-3) + 2T + max(T,P), T*N)   (N >= 3)
  double, O            L*(N-2) + T + max(T,L) + max(T,P)   (N >= 2)

Every transfer row is additionally floored by the back-to-back bandwidth
bound T*N and by P plus the row's non-overlappable transfers (2T single,
1T double); for loop counts below a row's subtraction constant only the
floors apply.  The per-iteration critical path L is the maximum of the
cumulative inner loop (L_inner * N_inner) and every operand's arrival
combination at this loop: T+P sequential, max(T,P) when the transfer
overlaps via double buffering.  A transfer is charged at the innermost slot
of each loop block; the deepest memory level accesses the compute in situ
and charges nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .arch import ArchSpec
from .errors import CimoptError, ConfigError
from .mapping import Mapping, transfer_bounds
from .enumeration import tile_elements
from .workload import OPERANDS, FactorSet


@dataclass
class LatencyReport:
    p0: dict                      # operand -> total cycles
    total_latency: int
    slot_trace: list              # per active loop, outer to inner
    transfers: dict               # (operand, level) -> transfer statistics
    mvm_count: int
    mvm_cycles: int
    energy_pj: float = None
    edp_js: float = None

    def to_json_dict(self) -> dict:
        return {
            "p0": dict(self.p0),
            "total_latency": self.total_latency,
            "mvm_count": self.mvm_count,
            "mvm_cycles": self.mvm_cycles,
            "energy_pj": self.energy_pj,
            "edp_js": self.edp_js,
            "transfers": [
                {"operand": op, "level": m, **stats}
                for (op, m), stats in sorted(self.transfers.items())
            ],
            "slot_trace": self.slot_trace,
        }


def row_no_transfer(l_cur: int, n: int, p_in: int) -> int:
    return l_cur * (n - 1) + p_in


def row_single_iw(l_cur: int, n: int, t: int, p_in: int) -> int:
    best = max(t * n, p_in + 2 * t)
    if n >= 2:
        best = max(best, l_cur * (n - 2) + 2 * t + p_in)
    return best


def row_single_o(l_cur: int, n: int, t: int, p_in: int) -> int:
    return max(l_cur * (n - 1) + 2 * t + p_in, t * n, p_in + 2 * t)


def row_double_iw(l_cur: int, n: int, t: int, p_in: int) -> int:
    best = max(t * n, p_in + t)
    if n >= 3:
        best = max(best, l_cur * (n - 3) + 2 * t + max(t, p_in))
    return best


def row_double_o(l_cur: int, n: int, t: int, p_in: int) -> int:
    best = max(t * n, p_in + t)
    if n >= 2:
        best = max(best, l_cur * (n - 2) + t + max(t, l_cur) + max(t, p_in))
    return best


def _operand_latency(operand: str, overlapped: bool, has_transfer: bool,
                     l_cur: int, n: int, t: int, p_in: int) -> int:
    if not has_transfer:
        return row_no_transfer(l_cur, n, p_in)
    if operand == "O":
        return row_double_o(l_cur, n, t, p_in) if overlapped \
            else row_single_o(l_cur, n, t, p_in)
    return row_double_iw(l_cur, n, t, p_in) if overlapped \
        else row_single_iw(l_cur, n, t, p_in)


def evaluate(mapping: Mapping, factors: FactorSet, arch: ArchSpec) -> LatencyReport:
    """Full latency/energy report for a mapping (energy only when configured)."""
    layer = mapping.layer
    last = arch.last_level
    seq = sorted(mapping.temporal)        # (slot, dim, fidx, value), outer first
    mvm_cycles = arch.macro.mvm_cycles(layer.a_bits)

    level_of = {}
    for (op, m), members in mapping.blocks.items():
        for (d, f) in members:
            if not (0 <= m < arch.n_levels):
                raise CimoptError(f"mapping references unknown level {m}")
            level_of[(op, d, f)] = m
    for (u, *_rest) in mapping.spatial:
        if u >= len(arch.axes):
            raise CimoptError(f"mapping references unknown axis {u}")

    # innermost sequence position of every (operand, level) loop block
    innermost = {}
    for k, (i, d, f, val) in enumerate(seq):
        for op in OPERANDS:
            m = level_of.get((op, d, f))
            if m is not None:
                innermost[(op, m)] = k

    # transfer cycles charged at each sequence position, per operand
    t_at = {}
    tile_bits = {}
    for (op, m), k in innermost.items():
        if m >= last:
            continue                      # in-situ access, nothing crosses a bus
        bounds = transfer_bounds(mapping, op, m, arch)
        bits = tile_elements(op, layer, bounds) * layer.precision(op)
        tile_bits[(op, m)] = bits
        t_at[(k, op)] = (m, math.ceil(bits / arch.levels[m].bus_width_bits))

    p_cur = {op: mvm_cycles for op in OPERANDS}
    l_cur = mvm_cycles
    n_inner = 1
    trace = []
    for k in range(len(seq) - 1, -1, -1):
        slot, d, f, n = seq[k]
        combos = []
        step = {"slot": slot, "dim": d, "count": n}
        for op in OPERANDS:
            m_t = t_at.get((k, op))
            t = m_t[1] if m_t else 0
            overlapped = bool(m_t) and bool(mapping.dbuf.get((m_t[0], op)))
            combos.append(max(t, p_cur[op]) if overlapped else t + p_cur[op])
            step[op] = {"transfer_cycles": t, "overlapped": overlapped}
        l_new = max([l_cur * n_inner] + combos)
        p_new = {}
        for op in OPERANDS:
            m_t = t_at.get((k, op))
            t = m_t[1] if m_t else 0
            overlapped = bool(m_t) and bool(mapping.dbuf.get((m_t[0], op)))
            p_new[op] = _operand_latency(op, overlapped, bool(m_t),
                                         l_new, n, t, p_cur[op])
            step[op]["latency"] = p_new[op]
        step["critical_path"] = l_new
        trace.append(step)
        p_cur, l_cur, n_inner = p_new, l_new, n
    trace.reverse()

    mvm_count = 1
    for (_, _, _, val) in seq:
        mvm_count *= val

    transfers = {}
    for (op, m), k in sorted(innermost.items()):
        if m >= last:
            continue
        events = 1
        for j in range(k + 1):
            events *= seq[j][3]
        edges = dict(mapping.paths.get(op, ()))
        transfers[(op, m)] = {
            "events": events,
            "tile_bits": tile_bits[(op, m)],
            "bits_moved": events * tile_bits[(op, m)],
            "dest_level": edges.get(m, arch.sink),
        }

    report = LatencyReport(
        p0=dict(p_cur),
        total_latency=max(p_cur.values()),
        slot_trace=trace,
        transfers=transfers,
        mvm_count=mvm_count,
        mvm_cycles=mvm_cycles,
    )
    try:
        energy, edp = energy_edp(report, arch)
    except ConfigError:
        energy = edp = None
    report.energy_pj = energy
    report.edp_js = edp
    return report


def energy_edp(report: LatencyReport, arch: ArchSpec) -> tuple:
    """(energy_pj, edp_joule_seconds) from per-access energies.

    Each recorded hop charges reads at its source level and writes at its
    destination, with access counts = bits moved / bus width; MVM passes
    charge the macro energy.  Missing constants are a configuration error.
    """
    def need(value, what):
        if value is None:
            raise ConfigError(f"missing energy constant: {what}")
        return value

    energy = report.mvm_count * need(arch.macro.mvm_energy_pj, "macro mvm_energy_pj")
    for (op, m), stats in report.transfers.items():
        src = arch.levels[m]
        energy += (stats["bits_moved"] / src.bus_width_bits) \
            * need(src.read_energy_pj, f"level {src.name} read_energy_pj")
        dest = stats["dest_level"]
        if dest < arch.n_levels:
            dst = arch.levels[dest]
            energy += (stats["bits_moved"] / dst.bus_width_bits) \
                * need(dst.write_energy_pj, f"level {dst.name} write_energy_pj")
    seconds = report.total_latency * arch.clock_ns * 1e-9
    edp = energy * 1e-12 * seconds
    return energy, edp
