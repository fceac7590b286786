"""Reference mappers: exhaustive oracle, weight-stationary pin, random search.

The exhaustive mapper enumerates every legal combination of factor
placement, temporal ordering, per-operand loop-block levels, buffering
flags and transfer paths, evaluating each with the analytical model; it is
the ground truth small instances are checked against.  The heuristic is a
seeded random sampler with greedy single-move improvement; it is a
comparison point, not a reimplementation of any external framework.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import permutations, product as iter_product

from .arch import ArchSpec, path_pairs_with_sink
from .enumeration import CandidateTable, tile_elements
from .errors import CimoptError, ModelBuildError
from .latency import LatencyReport, evaluate
from .mapping import Mapping, stored_bounds, verify_mapping
from .mipbuild import BuildContext
from .mipmodel import EQ, MipModel
from .workload import OPERANDS, FactorSet, LayerShape


@dataclass(frozen=True)
class BaselineConfig:
    mode: str = "exhaustive"
    heuristic_samples: int = 200
    seed: int = 0
    exhaustive_cap: int = 10 ** 6

    def __post_init__(self):
        if self.mode not in ("exhaustive", "ws", "heuristic"):
            raise CimoptError(f"unknown baseline mode {self.mode!r}")
        if self.heuristic_samples < 1:
            raise CimoptError("heuristic_samples must be >= 1")


@dataclass
class SearchResult:
    mapping: Mapping
    report: LatencyReport
    space_size: int
    evaluated: int


def _ndseq_count(levels: int, k: int) -> int:
    return math.comb(k + levels - 1, levels - 1) if levels else (1 if k == 0 else 0)


def space_size_bound(factors: FactorSet, arch: ArchSpec) -> int:
    """Upper bound on the mapping-space size before legality filtering."""
    entries = factors.entries()
    db_spots = sum(1 for lv in arch.levels for op in OPERANDS
                   if lv.admits(op) and lv.double_buffer and lv.index < arch.last_level)
    adm_counts = {op: sum(1 for lv in arch.levels if lv.admits(op)) for op in OPERANDS}
    axis_options = [1 + sum(1 for ax in arch.axes if ax.allows(d))
                    for (d, f, val) in entries]
    total = 0
    # group placements by how many factors stay temporal
    for k in range(len(entries) + 1):
        placements_k = 0
        for subset in iter_product(*[(0, 1)] * len(entries)):
            if sum(subset) != len(entries) - k:
                continue
            ways = 1
            for j, s in enumerate(subset):
                ways *= (axis_options[j] - 1) if s else 1
            placements_k += ways
        combos = math.factorial(k)
        for op in OPERANDS:
            combos *= _ndseq_count(adm_counts[op], k)
        total += placements_k * combos
    return total * (2 ** db_spots)


def _nondecreasing_sequences(levels, k):
    if k == 0:
        yield ()
        return
    def rec(start, prefix):
        if len(prefix) == k:
            yield tuple(prefix)
            return
        for idx in range(start, len(levels)):
            yield from rec(idx, prefix + [levels[idx]])
    yield from rec(0, [])


def build_mapping(layer: LayerShape, arch: ArchSpec, temporal, spatial,
                  level_assign: dict, dbuf: dict) -> Mapping:
    """Assemble a Mapping from raw parts, deriving paths and sizes.

    `temporal` is the ordered list of (dim, fidx, value); `spatial` a list
    of (axis_index, dim, fidx, value); `level_assign` maps operand to the
    per-position level list.  Returns None when the derived transfer path
    is not realizable on this architecture.
    """
    from .mapping import operand_used_levels

    blocks = {}
    for op in OPERANDS:
        for pos, (d, f, val) in enumerate(temporal):
            m = level_assign[op][pos]
            blocks.setdefault((op, m), []).append((d, f))
    mapping = Mapping(
        layer=layer,
        temporal=tuple((i, d, f, val) for i, (d, f, val) in enumerate(temporal)),
        spatial=tuple(sorted(spatial)),
        blocks={k: tuple(sorted(v)) for k, v in blocks.items()},
        dbuf=dict(dbuf),
        paths={},
        sizes={},
    )
    paths = {}
    for op in OPERANDS:
        used = operand_used_levels(mapping, op, arch)
        if not used:
            paths[op] = ()
            continue
        legal = path_pairs_with_sink(arch, op)
        edges = []
        for idx, m in enumerate(used):
            nxt = used[idx + 1] if idx + 1 < len(used) else arch.sink
            if (m, nxt) not in legal:
                return None
            edges.append((m, nxt))
        paths[op] = tuple(edges)
    sizes = {}
    for lv in arch.levels:
        for op in OPERANDS:
            if lv.index in operand_used_levels(mapping, op, arch):
                bounds = stored_bounds(mapping, op, lv.index, arch)
                sizes[(lv.index, op)] = (tile_elements(op, layer, bounds)
                                         * layer.precision(op))
    return Mapping(layer=mapping.layer, temporal=mapping.temporal,
                   spatial=mapping.spatial, blocks=mapping.blocks,
                   dbuf=mapping.dbuf, paths=paths, sizes=sizes,
                   predicted={})


def _capacity_ok(mapping: Mapping, arch: ArchSpec) -> bool:
    for lv in arch.levels:
        load = 0
        for op in OPERANDS:
            bits = mapping.sizes.get((lv.index, op), 0)
            load += (2 if mapping.dbuf.get((lv.index, op)) else 1) * bits
        if load > lv.capacity_bits:
            return False
    return True


def _axis_ok(spatial, arch: ArchSpec) -> bool:
    prod = {}
    for (u, d, f, val) in spatial:
        prod[u] = prod.get(u, 1) * val
    return all(p <= arch.axes[u].size for u, p in prod.items())


def iter_legal_mappings(factors: FactorSet, arch: ArchSpec, layer: LayerShape):
    """Deterministic generator over every legal mapping."""
    entries = factors.entries()
    axis_choices = [[None] + [ax.index for ax in arch.axes if ax.allows(d)]
                    for (d, f, val) in entries]
    adm = {op: [lv.index for lv in arch.levels if lv.admits(op)] for op in OPERANDS}
    db_capable = [(lv.index, op) for lv in arch.levels for op in OPERANDS
                  if lv.admits(op) and lv.double_buffer and lv.index < arch.last_level]

    for placement in iter_product(*axis_choices):
        spatial = [(placement[j], *entries[j]) for j in range(len(entries))
                   if placement[j] is not None]
        if not _axis_ok(spatial, arch):
            continue
        temporal_pool = [entries[j] for j in range(len(entries)) if placement[j] is None]
        k = len(temporal_pool)
        for perm in permutations(range(k)):
            ordered = [temporal_pool[j] for j in perm]
            level_seqs = {op: list(_nondecreasing_sequences(adm[op], k))
                          for op in OPERANDS}
            for combo in iter_product(*(level_seqs[op] for op in OPERANDS)):
                level_assign = dict(zip(OPERANDS, combo))
                base = build_mapping(layer, arch, ordered, spatial, level_assign, {})
                if base is None:
                    continue
                used_db = [slot for slot in db_capable
                           if (slot[1], slot[0]) in base.blocks]
                for flags in iter_product((False, True), repeat=len(used_db)):
                    dbuf = {slot: flag for slot, flag in zip(used_db, flags) if flag}
                    mapping = Mapping(layer=base.layer, temporal=base.temporal,
                                      spatial=base.spatial, blocks=base.blocks,
                                      dbuf=dbuf, paths=base.paths, sizes=base.sizes,
                                      predicted={})
                    if _capacity_ok(mapping, arch):
                        yield mapping


def exhaustive_best(factors: FactorSet, arch: ArchSpec, table: CandidateTable,
                    cap: int = 10 ** 6) -> SearchResult:
    """Minimum-latency mapping by full enumeration (the oracle)."""
    layer = table.layer
    bound = space_size_bound(factors, arch)
    if bound > cap:
        raise CimoptError(
            f"mapping space of about {bound} points exceeds the exhaustive cap {cap}")
    best = None
    best_key = None
    evaluated = 0
    for mapping in iter_legal_mappings(factors, arch, layer):
        report = evaluate(mapping, factors, arch)
        evaluated += 1
        key = (report.total_latency, str(sorted(mapping.to_json_dict().items())))
        if best_key is None or key < best_key:
            best = (mapping, report)
            best_key = key
    if best is None:
        raise CimoptError("no legal mapping exists for this instance")
    return SearchResult(mapping=best[0], report=best[1],
                        space_size=bound, evaluated=evaluated)


def ws_strict_capacity_ok(ctx: BuildContext) -> bool:
    """Necessary condition for macro-resident weights: the whole weight
    tensor, divided by the best-case unrolling on axes above the deepest
    level, must fit the deepest weight-capable level."""
    arch = ctx.arch
    w_levels = ctx.adm_levels["W"]
    deepest = max(w_levels)
    w_dims = ("K", "C", "FY", "FX")
    total = 1
    for d in w_dims:
        total *= ctx.layer.dims[d]
    relief = 1
    for ax in arch.axes:
        if ax.attach_level < deepest and any(d in ax.dims for d in w_dims):
            relief *= ax.size
    resident_bits = -(-total // relief) * ctx.layer.precision("W")
    return resident_bits <= arch.levels[deepest].capacity_bits


def ws_constrained(model: MipModel, ctx: BuildContext,
                   allow_reload: bool = False) -> MipModel:
    """Pin weights to the deepest weight-capable level (weight-stationary).

    Every temporal factor's weight loop block is forced to the deepest
    level admitting W, so weights stay macro-resident.  With `allow_reload`
    the K/C factors may instead sit one weight-capable level higher, single
    buffered: the weight-reload rounds of an oversized layer.
    """
    w_levels = ctx.adm_levels["W"]
    if not w_levels:
        raise ModelBuildError("no weight-capable level to pin")
    deepest = max(w_levels)
    shallower = [m for m in w_levels if m < deepest]
    reload_level = max(shallower) if shallower else None
    if allow_reload and reload_level is None:
        raise ModelBuildError("no reload level exists above the macro-resident level")
    out = model.clone()
    for (d, f, val) in ctx.entries:
        for m in w_levels:
            if m == deepest:
                continue
            if allow_reload and m == reload_level and d in ("K", "C"):
                continue
            out.add_constr(f"ws.pin[{d},{f},{m}]",
                           [(ctx.mplace[(d, f, "W", m)], 1)], EQ, 0)
    if allow_reload and (reload_level, "W") in ctx.dbuf:
        out.add_constr("ws.singlebuf",
                       [(ctx.dbuf[(reload_level, "W")], 1)], EQ, 0)
    return out


def _random_legal_mapping(factors: FactorSet, arch: ArchSpec, layer: LayerShape,
                          rng: random.Random, attempts: int = 200):
    entries = factors.entries()
    adm = {op: [lv.index for lv in arch.levels if lv.admits(op)] for op in OPERANDS}
    db_capable = [(lv.index, op) for lv in arch.levels for op in OPERANDS
                  if lv.admits(op) and lv.double_buffer and lv.index < arch.last_level]
    for _ in range(attempts):
        spatial = []
        temporal = []
        for (d, f, val) in entries:
            axes = [ax.index for ax in arch.axes if ax.allows(d)]
            pick = rng.choice([None] * max(1, len(axes)) + axes)
            if pick is None:
                temporal.append((d, f, val))
            else:
                spatial.append((pick, d, f, val))
        if not _axis_ok(spatial, arch):
            continue
        rng.shuffle(temporal)
        level_assign = {}
        for op in OPERANDS:
            seq = sorted(rng.choices(adm[op], k=len(temporal)))
            level_assign[op] = seq
        base = build_mapping(layer, arch, temporal, spatial, level_assign, {})
        if base is None:
            continue
        dbuf = {}
        for slot in db_capable:
            if (slot[1], slot[0]) in base.blocks and rng.random() < 0.5:
                dbuf[slot] = True
        mapping = Mapping(layer=base.layer, temporal=base.temporal,
                          spatial=base.spatial, blocks=base.blocks,
                          dbuf=dbuf, paths=base.paths, sizes=base.sizes, predicted={})
        if _capacity_ok(mapping, arch):
            return mapping
    return None


def _neighbor_mappings(mapping: Mapping, factors: FactorSet, arch: ArchSpec,
                       layer: LayerShape):
    """Single-move neighbors: buffering flips and factor relocations."""
    for (m, op) in sorted(mapping.dbuf) + [
            (lv.index, op) for lv in arch.levels for op in OPERANDS
            if lv.admits(op) and lv.double_buffer and lv.index < arch.last_level
            and (op, lv.index) in mapping.blocks]:
        flipped = dict(mapping.dbuf)
        flipped[(m, op)] = not flipped.get((m, op), False)
        cand = Mapping(layer=mapping.layer, temporal=mapping.temporal,
                       spatial=mapping.spatial, blocks=mapping.blocks,
                       dbuf={k: v for k, v in flipped.items() if v},
                       paths=mapping.paths, sizes=mapping.sizes, predicted={})
        if _capacity_ok(cand, arch):
            yield cand
    ordered = [(d, f, val) for (_, d, f, val) in sorted(mapping.temporal)]
    level_assign = {op: [mapping.block_level_of(op, d, f) for (d, f, _) in ordered]
                    for op in OPERANDS}
    for j, (d, f, val) in enumerate(ordered):
        for ax in arch.axes:
            if not ax.allows(d):
                continue
            new_t = ordered[:j] + ordered[j + 1:]
            new_s = list(mapping.spatial) + [(ax.index, d, f, val)]
            if not _axis_ok(new_s, arch):
                continue
            la = {op: level_assign[op][:j] + level_assign[op][j + 1:] for op in OPERANDS}
            cand = build_mapping(layer, arch, new_t, new_s, la, dict(mapping.dbuf))
            if cand is not None and _capacity_ok(cand, arch):
                yield cand
    for (u, d, f, val) in sorted(mapping.spatial):
        new_s = [s for s in mapping.spatial if s != (u, d, f, val)]
        for pos in range(len(ordered) + 1):
            new_t = ordered[:pos] + [(d, f, val)] + ordered[pos:]
            la = {}
            ok = True
            for op in OPERANDS:
                seq = level_assign[op][:pos] + [None] + level_assign[op][pos:]
                fill = seq[pos - 1] if pos > 0 else (seq[pos + 1] if pos + 1 < len(seq)
                                                     else None)
                if fill is None:
                    adm = [lv.index for lv in arch.levels if lv.admits(op)]
                    fill = adm[0]
                seq[pos] = fill
                if not arch.levels[fill].admits(op):
                    ok = False
                    break
                la[op] = seq
            if not ok:
                continue
            cand = build_mapping(layer, arch, new_t, new_s, la, dict(mapping.dbuf))
            if cand is not None and _capacity_ok(cand, arch):
                yield cand


def heuristic_search(factors: FactorSet, arch: ArchSpec, table: CandidateTable,
                     cfg: BaselineConfig) -> SearchResult:
    """Seeded random sampling with greedy first-improvement hill climbing."""
    layer = table.layer
    best = None
    best_key = None
    evaluated = 0
    for sample in range(cfg.heuristic_samples):
        # per-sample substream: sample i is identical for any sample count
        rng = random.Random(cfg.seed * 1000003 + sample)
        mapping = _random_legal_mapping(factors, arch, layer, rng)
        if mapping is None:
            continue
        report = evaluate(mapping, factors, arch)
        evaluated += 1
        improved = True
        steps = 0
        while improved and steps < 50:
            improved = False
            steps += 1
            for cand in _neighbor_mappings(mapping, factors, arch, layer):
                cand_report = evaluate(cand, factors, arch)
                evaluated += 1
                if cand_report.total_latency < report.total_latency:
                    mapping, report = cand, cand_report
                    improved = True
                    break
        key = (report.total_latency, str(sorted(mapping.to_json_dict().items())))
        if best_key is None or key < best_key:
            best = (mapping, report)
            best_key = key
    if best is None:
        raise CimoptError("heuristic search found no legal mapping")
    return SearchResult(mapping=best[0], report=best[1],
                        space_size=space_size_bound(factors, arch),
                        evaluated=evaluated)
