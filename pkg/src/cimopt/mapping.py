"""Concrete mappings: decoding solver output, auditing, re-encoding.

A Mapping is the lingua franca between the optimizer, the analytical
evaluator and the baselines: an ordered temporal loop list, spatial
assignments, per-operand loop blocks per memory level, buffering modes,
transfer paths and stored sizes.  `verify_mapping` audits one directly
against the architecture and candidate table, without going through the
optimization model, so it double-checks both solver output and baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .arch import ArchSpec, path_pairs_with_sink
from .enumeration import CandidateTable, operand_loop_dims, tile_elements
from .errors import DecodeError
from .mipbuild import BuildContext
from .mipmodel import MipModel
from .workload import DIMS, OPERANDS, FactorSet, LayerShape


@dataclass(frozen=True)
class Mapping:
    layer: LayerShape
    temporal: tuple      # (slot, dim, factor_index, value), ascending slots
    spatial: tuple       # (axis_index, dim, factor_index, value)
    blocks: dict         # (operand, level) -> tuple of (dim, factor_index)
    dbuf: dict           # (level, operand) -> bool
    paths: dict          # operand -> tuple of (level, next_level) edges
    sizes: dict          # (level, operand) -> stored bits
    predicted: dict = field(default_factory=dict)

    def block_level_of(self, operand: str, d: str, f: int):
        for (op, m), members in self.blocks.items():
            if op == operand and (d, f) in members:
                return m
        return None

    def used_levels(self, operand: str) -> list:
        return sorted(m for (op, m), members in self.blocks.items()
                      if op == operand and members)

    def to_json_dict(self) -> dict:
        return {
            "layer": self.layer.name,
            "temporal": [list(t) for t in self.temporal],
            "spatial": [list(s) for s in self.spatial],
            "blocks": [{"operand": op, "level": m, "factors": [list(x) for x in v]}
                       for (op, m), v in sorted(self.blocks.items())],
            "double_buffer": [{"level": m, "operand": op, "enabled": bool(v)}
                              for (m, op), v in sorted(self.dbuf.items())],
            "paths": {op: [list(e) for e in self.paths.get(op, ())] for op in OPERANDS},
            "sizes": [{"level": m, "operand": op, "bits": b}
                      for (m, op), b in sorted(self.sizes.items())],
            "predicted": {k: (str(v) if isinstance(v, Fraction) else v)
                          for k, v in self.predicted.items()},
        }


def operand_used_levels(mapping: Mapping, operand: str, arch: ArchSpec) -> list:
    """Levels holding the operand: non-empty loop blocks, plus the deepest
    level when in-situ axes (attached to it) carry unrolled relevant dims."""
    used = {m for (op, m), members in mapping.blocks.items()
            if op == operand and members}
    last = arch.last_level
    if arch.levels[last].admits(operand):
        odims = operand_loop_dims(operand)
        for (u, d, f, val) in mapping.spatial:
            if d in odims and arch.axes[u].attach_level == last:
                used.add(last)
    return sorted(used)


def spatial_bound(mapping: Mapping, d: str, m: int, arch: ArchSpec) -> int:
    """Product of spatially unrolled factors of dim `d` visible at level m."""
    prod = 1
    for (u, dd, f, val) in mapping.spatial:
        if dd == d and arch.axes[u].multiplies_level(m):
            prod *= val
    return prod


def stored_bounds(mapping: Mapping, operand: str, m: int, arch: ArchSpec) -> dict:
    """Per-dim bounds of the tile resident at level m for an operand."""
    bounds = {}
    for d in operand_loop_dims(operand):
        prod = spatial_bound(mapping, d, m, arch)
        for (op, lvl), members in mapping.blocks.items():
            if op != operand or lvl < m:
                continue
            for (dd, f) in members:
                if dd == d:
                    prod *= _factor_value(mapping, dd, f)
        bounds[d] = prod
    return bounds


def transfer_bounds(mapping: Mapping, operand: str, m: int, arch: ArchSpec) -> dict:
    """Per-dim bounds of the tile pushed out of level m per block iteration."""
    bounds = {}
    for d in operand_loop_dims(operand):
        prod = spatial_bound(mapping, d, m, arch)
        for (op, lvl), members in mapping.blocks.items():
            if op != operand or lvl < m + 1:
                continue
            for (dd, f) in members:
                if dd == d:
                    prod *= _factor_value(mapping, dd, f)
        bounds[d] = prod
    return bounds


def _factor_value(mapping: Mapping, d: str, f: int) -> int:
    for (_, dd, ff, val) in mapping.temporal:
        if dd == d and ff == f:
            return val
    for (_, dd, ff, val) in mapping.spatial:
        if dd == d and ff == f:
            return val
    raise DecodeError(f"factor ({d},{f}) not placed anywhere in the mapping")


def decode_solution(model: MipModel, ctx: BuildContext, values) -> Mapping:
    """Turn a verified assignment into a Mapping.

    Refuses assignments that violate any constraint, naming the first
    offender, and re-audits the decoded mapping before returning it.
    """
    bad = model.check_assignment(values)
    if bad:
        raise DecodeError(f"assignment violates constraint {bad[0]}")
    temporal = []
    spatial = []
    for (d, f, val) in ctx.entries:
        for i in range(ctx.n_slots):
            if values[ctx.tplace[(d, f, i)]]:
                temporal.append((i, d, f, val))
        for ax in ctx.axes_for_dim[d]:
            key = (d, f, ax.index)
            if key in ctx.splace and values[ctx.splace[key]]:
                spatial.append((ax.index, d, f, val))
    blocks = {}
    for (d, f, operand, m), vidx in ctx.mplace.items():
        if values[vidx]:
            blocks.setdefault((operand, m), []).append((d, f))
    paths = {}
    for (m, mp, operand), vidx in ctx.edge.items():
        if values[vidx]:
            paths.setdefault(operand, []).append((m, mp))
    mapping = Mapping(
        layer=ctx.layer,
        temporal=tuple(sorted(temporal)),
        spatial=tuple(sorted(spatial)),
        blocks={k: tuple(sorted(v)) for k, v in blocks.items()},
        dbuf={k: bool(values[v]) for k, v in ctx.dbuf.items()},
        paths={op: tuple(sorted(v)) for op, v in paths.items()},
        sizes={k: values[v] for k, v in ctx.size.items()},
        predicted={
            "p0": {op: (values[ctx.pcyc[(0, op)]] if ctx.n_slots else ctx.mvm_cycles)
                   for op in OPERANDS},
            "lmax": values[ctx.lmax] if ctx.lmax >= 0 else ctx.mvm_cycles,
            "objective": model.eval_objective(values),
        },
    )
    violations = verify_mapping(mapping, ctx.factors, ctx.arch, ctx.table)
    if violations:
        raise DecodeError(f"decoded mapping fails audit: {violations[0]}")
    return mapping


def verify_mapping(mapping: Mapping, factors: FactorSet, arch: ArchSpec,
                   table: CandidateTable) -> list:
    """Audit a mapping from first principles; returns violations (empty = pass)."""
    out = []
    layer = mapping.layer
    entries = set(factors.entries())
    placed = {}

    for (i, d, f, val) in mapping.temporal:
        key = (d, f, val)
        if key not in entries:
            out.append(f"uniqueness: unknown temporal factor ({d},{f})={val}")
            continue
        placed[key] = placed.get(key, 0) + 1
    for (u, d, f, val) in mapping.spatial:
        key = (d, f, val)
        if key not in entries:
            out.append(f"uniqueness: unknown spatial factor ({d},{f})={val}")
            continue
        placed[key] = placed.get(key, 0) + 1
        if u >= len(arch.axes):
            out.append(f"spatial: axis {u} does not exist")
        elif not arch.axes[u].allows(d):
            out.append(f"spatial: axis {arch.axes[u].name} does not allow dim {d}")
    for key in entries:
        n = placed.get(key, 0)
        if n != 1:
            out.append(f"uniqueness: factor {key} placed {n} times")

    slots = [i for (i, *_rest) in mapping.temporal]
    if len(slots) != len(set(slots)):
        out.append("temporal: duplicate slot indices")
    if slots and (min(slots) < 0 or max(slots) >= factors.total_count()):
        out.append("temporal: slot index out of range")
    if sorted(slots) != list(range(len(slots))):
        out.append("temporal: active slots must pack from slot 0")

    for ax in arch.axes:
        prod = 1
        for (u, d, f, val) in mapping.spatial:
            if u == ax.index:
                prod *= val
        if prod > ax.size:
            out.append(f"spatial: axis {ax.name} product {prod} exceeds size {ax.size}")

    temporal_ids = {(d, f) for (_, d, f, _) in mapping.temporal}
    slot_of = {(d, f): i for (i, d, f, _) in mapping.temporal}
    for operand in OPERANDS:
        assigned = {}
        for (op, m), members in mapping.blocks.items():
            if op != operand:
                continue
            if not (0 <= m < arch.n_levels):
                out.append(f"blocks: level {m} does not exist")
                continue
            if not arch.levels[m].admits(operand):
                out.append(f"blocks: level {arch.levels[m].name} does not admit {operand}")
            for (d, f) in members:
                if (d, f) in assigned:
                    out.append(f"blocks: factor ({d},{f}) in two levels for {operand}")
                assigned[(d, f)] = m
        if set(assigned) != temporal_ids:
            out.append(f"blocks: {operand} loop blocks do not cover the temporal factors")
            continue
        ordered = sorted(assigned.items(), key=lambda kv: slot_of[kv[0]])
        levels_seq = [m for _, m in ordered]
        if any(levels_seq[k] > levels_seq[k + 1] for k in range(len(levels_seq) - 1)):
            out.append(f"order: {operand} loop-block levels decrease inward")

        used = operand_used_levels(mapping, operand, arch)
        edges = dict(mapping.paths.get(operand, ()))
        if sorted(edges) != used:
            out.append(f"path: {operand} edges do not originate from exactly the used levels")
        else:
            legal = path_pairs_with_sink(arch, operand)
            for k, m in enumerate(used):
                nxt = used[k + 1] if k + 1 < len(used) else arch.sink
                if edges[m] != nxt:
                    out.append(f"path: {operand} edge from {m} skips the next used level {nxt}")
                elif (m, nxt) not in legal:
                    out.append(f"path: {operand} edge ({m},{nxt}) is not a legal pair")

    for (m, operand), flag in mapping.dbuf.items():
        if not flag:
            continue
        lv = arch.levels[m]
        if not lv.double_buffer:
            out.append(f"buffering: level {lv.name} cannot double-buffer")
        if m == arch.last_level:
            out.append(f"buffering: in-situ level {lv.name} cannot double-buffer")
        if m not in operand_used_levels(mapping, operand, arch):
            out.append(f"buffering: double buffer on unused level {lv.name} for {operand}")

    for lv in arch.levels:
        load = 0
        for operand in OPERANDS:
            used = lv.index in operand_used_levels(mapping, operand, arch)
            bounds = stored_bounds(mapping, operand, lv.index, arch)
            bits = tile_elements(operand, layer, bounds) * layer.precision(operand) \
                if used else 0
            recorded = mapping.sizes.get((lv.index, operand), 0)
            if recorded != bits:
                out.append(f"size: recorded {recorded} != derived {bits} bits "
                           f"for {operand} at {lv.name}")
            if used and table.has(lv.index, operand):
                if table.find_row(lv.index, operand, bounds) is None:
                    out.append(f"size: {operand} tile at {lv.name} not in candidate table")
            factor = 2 if mapping.dbuf.get((lv.index, operand)) else 1
            load += factor * bits
        if load > lv.capacity_bits:
            out.append(f"capacity: level {lv.name} needs {load} of {lv.capacity_bits} bits")
    return out


def structural_assignment(mapping: Mapping, ctx: BuildContext) -> dict:
    """Binary values of every structural variable implied by a mapping."""
    values = {}
    for key, vidx in ctx.tplace.items():
        values[vidx] = 0
    for key, vidx in ctx.splace.items():
        values[vidx] = 0
    for key, vidx in ctx.mplace.items():
        values[vidx] = 0
    for key, vidx in ctx.edge.items():
        values[vidx] = 0
    for (i, d, f, val) in mapping.temporal:
        values[ctx.tplace[(d, f, i)]] = 1
    for (u, d, f, val) in mapping.spatial:
        values[ctx.splace[(d, f, u)]] = 1
    for (operand, m), members in mapping.blocks.items():
        for (d, f) in members:
            values[ctx.mplace[(d, f, operand, m)]] = 1
    for (m, operand), vidx in ctx.dbuf.items():
        values[vidx] = 1 if mapping.dbuf.get((m, operand)) else 0
    for operand, edges in mapping.paths.items():
        for (m, mp) in edges:
            values[ctx.edge[(m, mp, operand)]] = 1
    return values


def re_encode(mapping: Mapping, model: MipModel, ctx: BuildContext) -> list:
    """Full model assignment realizing a mapping (exact latency completion)."""
    from .solve import min_completion

    return min_completion(model, structural_assignment(mapping, ctx))
