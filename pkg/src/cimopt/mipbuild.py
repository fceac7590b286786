"""Assembles the full mapping-optimization model for one layer.

Decision structure, mirroring how a mapping is specified:

* every tiling factor goes to exactly one temporal slot or spatial axis;
* temporally placed factors get, per operand, exactly one memory level
  (its loop block), with levels non-decreasing from outer to inner slots;
* per (level, operand): used flag, double-buffer flag, one outgoing
  transfer edge toward the compute port, and one-hot selections of the
  stored-tile and transferred-tile candidates;
* per slot: the loop count selection and the latency recursion variables.

All latency rows are lower bounds; under minimization (and under the
least-fixpoint completion the builtin solver applies) they pin the exact
recursion values, so the solver's cycle counts are directly comparable to
the independent analytical evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .arch import ArchSpec, path_pairs_with_sink
from .enumeration import (CandidateTable, LOG_SLACK, operand_loop_dims, slog)
from .errors import ModelBuildError
from .mipmodel import EQ, GE, LE, MipModel
from .workload import OPERANDS, FactorSet, LayerShape

#: Safety limits keeping the scaled-log matching exact (see enumeration).
MAX_DIM_BOUND = 10 ** 4
MAX_AXIS_SIZE = 10 ** 4
MAX_FACTORS_PER_DIM = 8
AXIS_LOG_SLACK = 32


@dataclass(frozen=True)
class ObjectiveWeights:
    """Latency weight and (small) locality reward weight."""

    latency: Fraction = Fraction(1)
    locality: Fraction = Fraction(1, 10 ** 6)

    def __post_init__(self):
        lat = Fraction(str(self.latency)) if not isinstance(self.latency, Fraction) \
            else self.latency
        loc = Fraction(str(self.locality)) if not isinstance(self.locality, Fraction) \
            else self.locality
        object.__setattr__(self, "latency", lat)
        object.__setattr__(self, "locality", loc)
        if lat <= 0:
            raise ModelBuildError("latency weight must be positive")
        if loc < 0:
            raise ModelBuildError("locality weight must be non-negative")


@dataclass
class BuildContext:
    """Everything decode/verify/baselines need to interpret the model."""

    layer: LayerShape
    factors: FactorSet
    arch: ArchSpec
    table: CandidateTable
    weights: ObjectiveWeights = None
    entries: list = field(default_factory=list)   # (dim, fidx, value)
    n_slots: int = 0
    mvm_cycles: int = 0
    count_domain: tuple = ()
    pairs: dict = field(default_factory=dict)     # operand -> sorted pairs incl sink
    adm_levels: dict = field(default_factory=dict)  # operand -> level indices
    axes_for_dim: dict = field(default_factory=dict)
    tcost: dict = field(default_factory=dict)     # (m, operand, row) -> cycles
    p_ub: list = field(default_factory=list)
    l_ub: list = field(default_factory=list)
    t_ub: int = 0
    # variable index maps
    tplace: dict = field(default_factory=dict)
    splace: dict = field(default_factory=dict)
    mplace: dict = field(default_factory=dict)
    dbuf: dict = field(default_factory=dict)
    edge: dict = field(default_factory=dict)
    active: dict = field(default_factory=dict)
    used: dict = field(default_factory=dict)
    blockand: dict = field(default_factory=dict)
    blockslot: dict = field(default_factory=dict)
    xferslot: dict = field(default_factory=dict)
    dl: dict = field(default_factory=dict)
    ovl: dict = field(default_factory=dict)
    xfer: dict = field(default_factory=dict)
    selcnt: dict = field(default_factory=dict)
    selsize: dict = field(default_factory=dict)
    seltile: dict = field(default_factory=dict)
    logS: dict = field(default_factory=dict)
    logT: dict = field(default_factory=dict)
    size: dict = field(default_factory=dict)
    dsize: dict = field(default_factory=dict)
    tcyc: dict = field(default_factory=dict)
    pcyc: dict = field(default_factory=dict)
    lcyc: dict = field(default_factory=dict)
    maxtp: dict = field(default_factory=dict)
    maxtl: dict = field(default_factory=dict)
    lmax: int = -1

    @property
    def last_level(self) -> int:
        return self.arch.last_level

    def operand_class(self, operand: str) -> str:
        return "O" if operand == "O" else "IW"


def _validate_inputs(layer, factors, arch, table):
    if table.layer is not layer and table.layer != layer:
        raise ModelBuildError("candidate table was built for a different layer")
    if table.factors != factors:
        raise ModelBuildError("candidate table was built for different factors")
    for d, fs in factors.factors.items():
        if len(fs) > MAX_FACTORS_PER_DIM:
            raise ModelBuildError(
                f"dimension {d} has {len(fs)} factors; the log-domain matching "
                f"supports at most {MAX_FACTORS_PER_DIM} (merge harder)")
        prod = 1
        for f in fs:
            prod *= f
        if prod != layer.dims[d]:
            raise ModelBuildError(f"factor product for {d} is {prod}, layer has {layer.dims[d]}")
        if layer.dims[d] > MAX_DIM_BOUND:
            raise ModelBuildError(f"dimension {d} bound {layer.dims[d]} exceeds {MAX_DIM_BOUND}")
    for ax in arch.axes:
        if ax.size > MAX_AXIS_SIZE:
            raise ModelBuildError(f"axis {ax.name!r} size {ax.size} exceeds {MAX_AXIS_SIZE}")


def build_mapping_constraints(factors: FactorSet, arch: ArchSpec, table: CandidateTable,
                              slots: int = None) -> tuple:
    """Placement, loop-block, utilization, path and ordering structure."""
    layer = table.layer
    _validate_inputs(layer, factors, arch, table)
    ctx = BuildContext(layer=layer, factors=factors, arch=arch, table=table)
    ctx.entries = factors.entries()
    ctx.n_slots = len(ctx.entries) if slots is None else slots
    ctx.mvm_cycles = arch.macro.mvm_cycles(layer.a_bits)
    ctx.count_domain = table.count_domain
    ctx.axes_for_dim = {d: [ax for ax in arch.axes if ax.allows(d)]
                        for d in factors.factors}
    for operand in OPERANDS:
        ctx.adm_levels[operand] = [lv.index for lv in arch.levels if lv.admits(operand)]
        ctx.pairs[operand] = sorted(path_pairs_with_sink(arch, operand))

    model = MipModel(f"map_{layer.name}")
    S = ctx.n_slots
    last = ctx.last_level

    # Structural binaries, declared first: the builtin solver branches in
    # declaration order and everything after these is implied.
    for (d, f, val) in ctx.entries:
        for i in range(S):
            ctx.tplace[(d, f, i)] = model.add_binary(f"tplace[{d},{f},{i}]")
        for ax in ctx.axes_for_dim[d]:
            ctx.splace[(d, f, ax.index)] = model.add_binary(f"splace[{d},{f},{ax.index}]")
    for (d, f, val) in ctx.entries:
        for operand in OPERANDS:
            for m in ctx.adm_levels[operand]:
                ctx.mplace[(d, f, operand, m)] = model.add_binary(f"mplace[{d},{f},{operand},{m}]")
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            if m < last and arch.levels[m].double_buffer:
                ctx.dbuf[(m, operand)] = model.add_binary(f"dbuf[{m},{operand}]")
    for operand in OPERANDS:
        for (m, mp) in ctx.pairs[operand]:
            ctx.edge[(m, mp, operand)] = model.add_binary(f"edge[{m},{mp},{operand}]")

    # Derived binaries.
    for i in range(S):
        ctx.active[i] = model.add_binary(f"active[{i}]")
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            ctx.used[(m, operand)] = model.add_binary(f"used[{m},{operand}]")
    for (d, f, val) in ctx.entries:
        for operand in OPERANDS:
            for m in ctx.adm_levels[operand]:
                for i in range(S):
                    ctx.blockand[(d, f, operand, m, i)] = model.add_binary(
                        f"blockand[{d},{f},{operand},{m},{i}]")
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            for i in range(S):
                ctx.blockslot[(i, operand, m)] = model.add_binary(f"blockslot[{i},{operand},{m}]")
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            if m >= last:
                continue
            for i in range(S):
                ctx.xferslot[(i, operand, m)] = model.add_binary(f"xferslot[{i},{operand},{m}]")
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            if (m, operand) not in ctx.dbuf:
                continue
            for i in range(S):
                ctx.dl[(i, operand, m)] = model.add_binary(f"dl[{i},{operand},{m}]")
    for operand in OPERANDS:
        for i in range(S):
            if any((i, operand, m) in ctx.dl for m in ctx.adm_levels[operand]):
                ctx.ovl[(i, operand)] = model.add_binary(f"ovl[{i},{operand}]")
            if any((i, operand, m) in ctx.xferslot for m in ctx.adm_levels[operand]):
                ctx.xfer[(i, operand)] = model.add_binary(f"xfer[{i},{operand}]")

    # --- placement uniqueness and slot activity -------------------------
    for (d, f, val) in ctx.entries:
        cols = [(ctx.tplace[(d, f, i)], 1) for i in range(S)]
        cols += [(ctx.splace[(d, f, ax.index)], 1) for ax in ctx.axes_for_dim[d]]
        model.add_constr(f"eq2.uniq[{d},{f}]", cols, EQ, 1)
    for i in range(S):
        terms = [(ctx.active[i], 1)] + [(ctx.tplace[(d, f, i)], -1) for (d, f, _) in ctx.entries]
        model.add_constr(f"eq4.act[{i}]", terms, EQ, 0)

    # redundant counting row: one active slot or one axis spot per factor
    if ctx.entries:
        count_terms = [(ctx.active[i], 1) for i in range(S)]
        count_terms += [(v, 1) for v in ctx.splace.values()]
        model.add_constr("count.total", count_terms, EQ, len(ctx.entries))

    # Equal-value factors of one dimension are interchangeable; canonicalize
    # (spatial ones first, then ascending slots / axis indices) to halve the
    # search per identical pair.
    by_dim: dict = {}
    for (d, f, val) in ctx.entries:
        by_dim.setdefault(d, []).append((f, val))
    for d, lst in by_dim.items():
        for (f0, v0), (f1, v1) in zip(lst, lst[1:]):
            if v0 != v1:
                continue
            t0 = [(ctx.tplace[(d, f0, i)], 1) for i in range(S)]
            t1 = [(ctx.tplace[(d, f1, i)], 1) for i in range(S)]
            model.add_constr(f"sym.tloc[{d},{f0}]",
                             [(v, -c) for v, c in t0] + t1, GE, 0)
            slot_terms = ([(ctx.tplace[(d, f1, i)], i) for i in range(S)]
                          + [(ctx.tplace[(d, f0, i)], -i - S) for i in range(S)])
            model.add_constr(f"sym.tslot[{d},{f0}]", slot_terms, GE, 1 - S)
            if len(ctx.axes_for_dim[d]) > 1:
                n_axes = len(arch.axes)
                terms = [(ctx.splace[(d, f1, ax.index)], ax.index)
                         for ax in ctx.axes_for_dim[d]]
                terms += [(ctx.splace[(d, f0, ax.index)], -ax.index)
                          for ax in ctx.axes_for_dim[d]]
                terms += [(ctx.tplace[(d, f1, i)], n_axes) for i in range(S)]
                model.add_constr(f"sym.axis[{d},{f0}]", terms, GE, 0)

    # --- loop-block assignment and utilization --------------------------
    for (d, f, val) in ctx.entries:
        for operand in OPERANDS:
            terms = [(ctx.mplace[(d, f, operand, m)], 1) for m in ctx.adm_levels[operand]]
            terms += [(ctx.tplace[(d, f, i)], -1) for i in range(S)]
            model.add_constr(f"mem.assign[{d},{f},{operand}]", terms, EQ, 0)
    for operand in OPERANDS:
        odims = set(operand_loop_dims(operand))
        for m in ctx.adm_levels[operand]:
            ins = [ctx.mplace[(d, f, operand, m)] for (d, f, _) in ctx.entries]
            if m == last:
                # axes living inside the deepest level (in-situ compute
                # storage) keep their unrolled data resident there even
                # without temporal loops at that level
                ins += [ctx.splace[(d, f, ax.index)]
                        for (d, f, _) in ctx.entries if d in odims
                        for ax in ctx.axes_for_dim[d] if ax.attach_level == last]
            if ins:
                model.add_or(f"eq4.used[{m},{operand}]", ctx.used[(m, operand)], ins)
            else:
                model.add_constr(f"eq4.used[{m},{operand}]",
                                 [(ctx.used[(m, operand)], 1)], EQ, 0)

    # --- per-slot block membership and innermost-transfer slots ---------
    for (d, f, val) in ctx.entries:
        for operand in OPERANDS:
            for m in ctx.adm_levels[operand]:
                for i in range(S):
                    model.add_and(f"eq3.and[{d},{f},{operand},{m},{i}]",
                                  ctx.blockand[(d, f, operand, m, i)],
                                  [ctx.mplace[(d, f, operand, m)], ctx.tplace[(d, f, i)]])
    for operand in OPERANDS:
        for m in ctx.adm_levels[operand]:
            for i in range(S):
                ins = [ctx.blockand[(d, f, operand, m, i)] for (d, f, _) in ctx.entries]
                model.add_sum_eq(f"eq3.z[{i},{operand},{m}]",
                                 ctx.blockslot[(i, operand, m)], ins)
    for (i, operand, m), xv in ctx.xferslot.items():
        bs = ctx.blockslot[(i, operand, m)]
        inner = [ctx.blockslot[(j, operand, m)] for j in range(i + 1, ctx.n_slots)]
        model.add_constr(f"xfer.inner.ub0[{i},{operand},{m}]", [(xv, 1), (bs, -1)], LE, 0)
        for k, bj in enumerate(inner):
            model.add_constr(f"xfer.inner.ub{k + 1}[{i},{operand},{m}]",
                             [(xv, 1), (bj, 1)], LE, 1)
        model.add_constr(f"xfer.inner.lb[{i},{operand},{m}]",
                         [(xv, 1), (bs, -1)] + [(bj, 1) for bj in inner], GE, 0)
    for (i, operand, m), dv in ctx.dl.items():
        model.add_and(f"eq12.and[{i},{operand},{m}]", dv,
                      [ctx.xferslot[(i, operand, m)], ctx.dbuf[(m, operand)]])
    for (i, operand), ov in ctx.ovl.items():
        ins = [ctx.dl[(i, operand, m)] for m in ctx.adm_levels[operand]
               if (i, operand, m) in ctx.dl]
        model.add_sum_eq(f"eq12.ovl[{i},{operand}]", ov, ins)
    for (i, operand), xv in ctx.xfer.items():
        ins = [ctx.xferslot[(i, operand, m)] for m in ctx.adm_levels[operand]
               if (i, operand, m) in ctx.xferslot]
        model.add_sum_eq(f"xfer.def[{i},{operand}]", xv, ins)

    # --- transfer paths --------------------------------------------------
    for operand in OPERANDS:
        outgoing = {}
        for (m, mp) in ctx.pairs[operand]:
            outgoing.setdefault(m, []).append(ctx.edge[(m, mp, operand)])
        for m in ctx.adm_levels[operand]:
            terms = [(e, 1) for e in outgoing.get(m, [])]
            terms.append((ctx.used[(m, operand)], -1))
            model.add_constr(f"eq5.path[{m},{operand}]", terms, EQ, 0)
        for (m, mp) in ctx.pairs[operand]:
            if mp < ctx.arch.sink:
                # transfers terminate at utilized levels only
                model.add_constr(f"eq5.into[{m},{mp},{operand}]",
                                 [(ctx.edge[(m, mp, operand)], 1),
                                  (ctx.used[(mp, operand)], -1)],
                                 LE, 0)
        for (m, m1) in ctx.pairs[operand]:
            if m1 >= ctx.arch.sink:
                continue
            for (m_, m2) in ctx.pairs[operand]:
                if m_ != m or m2 <= m1:
                    continue
                # skipping a used level is illegal: edge(m,m2) forces either
                # level m1 unused or an (unsatisfiable) second edge from m
                model.add_constr(
                    f"eq5.bypass[{m},{m1},{m2},{operand}]",
                    [(ctx.edge[(m, m2, operand)], 1), (ctx.used[(m1, operand)], 1),
                     (ctx.edge[(m, m1, operand)], -1)],
                    LE, 1)

    # --- outer slots stay at outer levels --------------------------------
    for operand in OPERANDS:
        levels = ctx.adm_levels[operand]
        for i in range(ctx.n_slots):
            for i2 in range(i + 1, ctx.n_slots):
                for m in levels:
                    for m2 in levels:
                        if m > m2:
                            model.add_constr(
                                f"order[{operand},{i},{i2},{m},{m2}]",
                                [(ctx.blockslot[(i, operand, m)], 1),
                                 (ctx.blockslot[(i2, operand, m2)], 1)],
                                LE, 1)

    # --- double-buffer only on used levels -------------------------------
    for (m, operand), dv in ctx.dbuf.items():
        model.add_constr(f"dbuf.used[{m},{operand}]",
                         [(dv, 1), (ctx.used[(m, operand)], -1)], LE, 0)

    # --- spatial axis capacity (log domain) -------------------------------
    for ax in ctx.arch.axes:
        terms = [(ctx.splace[(d, f, ax.index)], slog(val))
                 for (d, f, val) in ctx.entries if (d, f, ax.index) in ctx.splace]
        if terms:
            model.add_constr(f"axis[{ax.index}]", terms, LE,
                             slog(ax.size) + AXIS_LOG_SLACK)
    return model, ctx


def build_size_constraints(model: MipModel, ctx: BuildContext) -> None:
    """Log-domain bound bookkeeping, tile selections, sizes and capacity."""
    arch, table, layer = ctx.arch, ctx.table, ctx.layer
    last = ctx.last_level
    for operand in OPERANDS:
        prec = layer.precision(operand)
        dims = operand_loop_dims(operand)
        for m in ctx.adm_levels[operand]:
            rows = table.row_list(m, operand)
            if not rows:
                raise ModelBuildError(f"empty candidate list for level {m} operand {operand}")
            if rows[0].elements != 1:
                raise ModelBuildError("candidate lists must start with the unit tile")
            used = ctx.used[(m, operand)]

            # stored-tile bounds, one log variable per dimension; at the
            # outermost level every factor contributes exactly once, so the
            # bound is the constant full-layer product
            for d in dims:
                ub = sum(slog(val) for (dd, f, val) in ctx.entries if dd == d)
                if ub == 0:
                    continue
                lb0 = ub if m == 0 else 0
                v = model.add_int(f"logS[{m},{operand},{d}]", lb0, ub)
                ctx.logS[(m, operand, d)] = v
                terms = [(v, 1)]
                for (dd, f, val) in ctx.entries:
                    if dd != d:
                        continue
                    for m2 in ctx.adm_levels[operand]:
                        if m2 >= m:
                            terms.append((ctx.mplace[(dd, f, operand, m2)], -slog(val)))
                    for ax in ctx.axes_for_dim[dd]:
                        if ax.multiplies_level(m):
                            terms.append((ctx.splace[(dd, f, ax.index)], -slog(val)))
                model.add_constr(f"eq6.def[{m},{operand},{d}]", terms, EQ, 0)
                if m < last:
                    v2 = model.add_int(f"logT[{m},{operand},{d}]", 0, ub)
                    ctx.logT[(m, operand, d)] = v2
                    terms = [(v2, 1)]
                    for (dd, f, val) in ctx.entries:
                        if dd != d:
                            continue
                        for m2 in ctx.adm_levels[operand]:
                            if m2 >= m + 1:
                                terms.append((ctx.mplace[(dd, f, operand, m2)], -slog(val)))
                        for ax in ctx.axes_for_dim[dd]:
                            if ax.multiplies_level(m):
                                terms.append((ctx.splace[(dd, f, ax.index)], -slog(val)))
                    model.add_constr(f"eq10.def[{m},{operand},{d}]", terms, EQ, 0)

            # one-hot tile selections with log-matching links (used levels only)
            for tag, sel_map, log_map in (("size", ctx.selsize, ctx.logS),
                                          ("tile", ctx.seltile, ctx.logT)):
                if tag == "tile" and m >= last:
                    continue
                sel = [model.add_binary(f"sel{tag}[{m},{operand},{r}]")
                       for r in range(len(rows))]
                for r, v in enumerate(sel):
                    sel_map[(m, operand, r)] = v
                eqname = "eq7.pick" if tag == "size" else "eq10.pick"
                model.add_exactly_one(f"{eqname}[{m},{operand}]", sel)
                model.add_constr(f"{eqname}.anchor[{m},{operand}]",
                                 [(sel[0], 1), (used, 1)], GE, 1)
                linkname = "eq8.link" if tag == "size" else "eq10.link"
                for d in dims:
                    lv = log_map.get((m, operand, d))
                    row_terms = [(sel[r], rows[r].log_bound(d)) for r in range(len(rows))]
                    if lv is None:
                        # dimension has no factors: bound is constant 1
                        terms = row_terms
                    else:
                        terms = row_terms + [(lv, -1)]
                    model.add_constr(f"{linkname}.lo[{m},{operand},{d}]", terms, GE,
                                     -LOG_SLACK, conds=[(used, 1)])
                    model.add_constr(f"{linkname}.hi[{m},{operand},{d}]", terms, LE,
                                     LOG_SLACK, conds=[(used, 1)])

            # stored size in bits, gated by the used flag
            max_bits = max(tc.elements for tc in rows) * prec
            sv = model.add_int(f"size[{m},{operand}]", 0, max_bits)
            ctx.size[(m, operand)] = sv
            bit_terms = [(ctx.selsize[(m, operand, r)], rows[r].elements * prec)
                         for r in range(len(rows))]
            model.add_constr(f"eq7.size.lb[{m},{operand}]",
                             [(sv, 1)] + [(v, -c) for v, c in bit_terms], GE, 0,
                             conds=[(used, 1)])
            model.add_constr(f"eq7.size.ub1[{m},{operand}]",
                             [(sv, 1)] + [(v, -c) for v, c in bit_terms], LE, 0)
            model.add_constr(f"eq7.size.ub2[{m},{operand}]",
                             [(sv, 1), (used, -max_bits)], LE, 0)

            # double-buffer capacity surcharge
            if (m, operand) in ctx.dbuf:
                dsv = model.add_int(f"dsize[{m},{operand}]", 0, max_bits)
                ctx.dsize[(m, operand)] = dsv
                model.add_constr(f"eq9.dsz[{m},{operand}]", [(dsv, 1), (sv, -1)], GE, 0,
                                 conds=[(ctx.dbuf[(m, operand)], 1)])

            # transfer cycle constants per candidate row
            if m < last:
                bw = arch.levels[m].bus_width_bits
                for r, tc in enumerate(rows):
                    ctx.tcost[(m, operand, r)] = math.ceil(tc.elements * prec / bw)

    for lv in arch.levels:
        terms = []
        for operand in OPERANDS:
            if (lv.index, operand) in ctx.size:
                terms.append((ctx.size[(lv.index, operand)], 1))
            if (lv.index, operand) in ctx.dsize:
                terms.append((ctx.dsize[(lv.index, operand)], 1))
        if terms:
            model.add_constr(f"cap[{lv.index}]", terms, LE, lv.capacity_bits)


def _latency_upper_bounds(ctx: BuildContext) -> None:
    """Conservative per-slot upper bounds sizing variable domains and big-Ms."""
    S = ctx.n_slots
    vmax = max(ctx.count_domain) if ctx.count_domain else 1
    tmax = max([c for c in ctx.tcost.values()] or [0])
    ctx.t_ub = tmax
    l_ub = [0] * (S + 1)
    p_ub = [0] * (S + 1)
    l_ub[S] = ctx.mvm_cycles
    p_ub[S] = ctx.mvm_cycles
    for i in range(S - 1, -1, -1):
        l_ub[i] = max(l_ub[i + 1] * vmax, tmax + p_ub[i + 1])
        p_ub[i] = l_ub[i] * vmax + 3 * tmax + p_ub[i + 1] + tmax * vmax
    ctx.l_ub, ctx.p_ub = l_ub, p_ub


def build_latency_constraints(model: MipModel, ctx: BuildContext) -> None:
    """Loop-count selection, transfer cycles and the latency recursion."""
    S = ctx.n_slots
    lmvm = ctx.mvm_cycles
    _latency_upper_bounds(ctx)

    # Active slots pack leftward.  Gaps between active loops would weaken
    # the inner-cumulative floor through the inactive propagation (an
    # artifact, not physics) and blow up the search space with symmetric
    # placements; packing removes both.
    for i in range(S - 1):
        model.add_constr(f"pack[{i}]",
                         [(ctx.active[i], 1), (ctx.active[i + 1], -1)], GE, 0)

    # loop-count one-hots, pinned to the placed factor values
    for i in range(S):
        sel = {v: model.add_binary(f"selcnt[{i},{v}]") for v in ctx.count_domain}
        for v, vi in sel.items():
            ctx.selcnt[(i, v)] = vi
        model.add_exactly_one(f"cnt.pick[{i}]", [sel[v] for v in ctx.count_domain])
        model.add_constr(f"cnt.one[{i}]", [(sel[1], 1), (ctx.active[i], 1)], EQ, 1)
        for v in ctx.count_domain:
            if v == 1:
                continue
            terms = [(sel[v], 1)]
            terms += [(ctx.tplace[(d, f, i)], -1)
                      for (d, f, val) in ctx.entries if val == v]
            model.add_constr(f"cnt.link[{i},{v}]", terms, EQ, 0)

    # transfer cycles, forced at the innermost slot of each loop block
    for operand in OPERANDS:
        for i in range(S):
            if (i, operand) not in ctx.xfer:
                continue
            tv = model.add_int(f"tcyc[{i},{operand}]", 0, ctx.t_ub)
            ctx.tcyc[(i, operand)] = tv
            for m in ctx.adm_levels[operand]:
                if (i, operand, m) not in ctx.xferslot:
                    continue
                rows = ctx.table.row_list(m, operand)
                terms = [(tv, 1)]
                terms += [(ctx.seltile[(m, operand, r)], -ctx.tcost[(m, operand, r)])
                          for r in range(len(rows))]
                model.add_constr(f"eq11.t[{i},{operand},{m}]", terms, GE, 0,
                                 conds=[(ctx.xferslot[(i, operand, m)], 1)])

    # recursion variables
    for i in range(S):
        ctx.lcyc[i] = model.add_int(f"lcyc[{i}]", lmvm, ctx.l_ub[i])
        for operand in OPERANDS:
            ctx.pcyc[(i, operand)] = model.add_int(f"pcyc[{i},{operand}]", lmvm, ctx.p_ub[i])
    # every row class keeps at least the inner nest: valid monotone chain that
    # lets bounds climb before the row guards resolve
    for i in range(S - 1):
        for operand in OPERANDS:
            model.add_constr(f"mono[{i},{operand}]",
                             [(ctx.pcyc[(i, operand)], 1),
                              (ctx.pcyc[(i + 1, operand)], -1)], GE, 0)
    for i in range(S):
        for operand in OPERANDS:
            if (i, operand) in ctx.ovl:
                ctx.maxtp[(i, operand)] = model.add_int(f"maxtp[{i},{operand}]",
                                                        lmvm, max(ctx.t_ub, ctx.p_ub[i + 1]))
                if operand == "O":
                    ctx.maxtl[(i, operand)] = model.add_int(f"maxtl[{i},{operand}]",
                                                            lmvm, max(ctx.t_ub, ctx.l_ub[i]))

    def pnext_term(i, operand):
        """(terms, const) for the inner-nest latency seen from slot i."""
        if i + 1 < S:
            return [(ctx.pcyc[(i + 1, operand)], 1)], 0
        return [], lmvm

    def lnext_term(i):
        if i + 1 < S:
            return [(ctx.lcyc[i + 1], 1)], 0
        return [], lmvm

    for i in range(S):
        lv = ctx.lcyc[i]
        ln_terms, ln_const = lnext_term(i)

        # critical path never shrinks moving outward
        model.add_constr(f"crit.prop[{i}]", [(lv, 1)] + [(v, -c) for v, c in ln_terms],
                         GE, ln_const)
        # cumulative inner-loop latency (active slots)
        if i + 1 < S:
            for v in ctx.count_domain:
                if v < 2:
                    continue
                model.add_constr(f"crit.inner[{i},{v}]",
                                 [(lv, 1), (ctx.lcyc[i + 1], -v)], GE, 0,
                                 conds=[(ctx.active[i], 1), (ctx.selcnt[(i + 1, v)], 1)])
            cmin = min((v for v in ctx.count_domain if v >= 2), default=None)
            if cmin is not None:
                # any active inner slot repeats at least cmin times
                model.add_constr(f"crit.floor[{i}]",
                                 [(lv, 1), (ctx.lcyc[i + 1], -cmin)], GE, 0,
                                 conds=[(ctx.active[i], 1), (ctx.active[i + 1], 1)])

        for operand in OPERANDS:
            pn_terms, pn_const = pnext_term(i, operand)
            tvar = ctx.tcyc.get((i, operand))
            ovl = ctx.ovl.get((i, operand))
            xfer = ctx.xfer.get((i, operand))

            # operand arrival/synchronization on the per-iteration path
            seq_terms = [(lv, 1)] + [(v, -c) for v, c in pn_terms]
            if tvar is not None:
                seq_terms.append((tvar, -1))
            conds = [(ctx.active[i], 1)]
            if ovl is not None:
                conds.append((ovl, 0))
            model.add_constr(f"crit.seq[{i},{operand}]", seq_terms, GE, pn_const,
                             conds=conds)
            if ovl is not None:
                mt = ctx.maxtp[(i, operand)]
                model.add_constr(f"mx.tp.t[{i},{operand}]", [(mt, 1), (tvar, -1)], GE, 0)
                model.add_constr(f"mx.tp.p[{i},{operand}]",
                                 [(mt, 1)] + [(v, -c) for v, c in pn_terms], GE, pn_const)
                model.add_constr(f"crit.ovl[{i},{operand}]", [(lv, 1), (mt, -1)], GE, 0,
                                 conds=[(ctx.active[i], 1), (ovl, 1)])

    # per-slot, per-operand processing latency (the five row classes)
    for i in range(S):
        lv = ctx.lcyc[i]
        for operand in OPERANDS:
            pv = ctx.pcyc[(i, operand)]
            pn_terms, pn_const = pnext_term(i, operand)
            tvar = ctx.tcyc.get((i, operand))
            ovl = ctx.ovl.get((i, operand))
            xfer = ctx.xfer.get((i, operand))
            cls_o = ctx.operand_class(operand) == "O"

            for v in ctx.count_domain:
                sc = (ctx.selcnt[(i, v)], 1)
                # weakest row over all buffering choices, usable as soon as
                # the count is known (coefficient v-2 without, v-3 with the
                # double-buffer option)
                floor_coef = v - (3 if ovl is not None else 2)
                if floor_coef > 0:
                    model.add_constr(f"tab2[{i},{operand},floor,{v}]",
                                     [(pv, 1), (lv, -floor_coef)]
                                     + [(vv, -c) for vv, c in pn_terms],
                                     GE, pn_const, conds=[sc])
                # no transfer at this slot: plain nest repetition
                conds = [sc] + ([(xfer, 0)] if xfer is not None else [])
                model.add_constr(f"tab2[{i},{operand},nt,{v}]",
                                 [(pv, 1), (lv, -(v - 1))] + [(vv, -c) for vv, c in pn_terms],
                                 GE, pn_const, conds=conds)
                if xfer is None:
                    continue
                # bandwidth floor: the loop can never beat back-to-back transfers
                model.add_constr(f"tab2[{i},{operand},tn,{v}]",
                                 [(pv, 1), (tvar, -v)], GE, 0,
                                 conds=[sc, (xfer, 1)])
                # single-buffered main rows
                s_conds = [sc, (xfer, 1)] + ([(ovl, 0)] if ovl is not None else [])
                if not cls_o and v >= 2:
                    model.add_constr(f"tab2[{i},{operand},s1,{v}]",
                                     [(pv, 1), (lv, -(v - 2)), (tvar, -2)]
                                     + [(vv, -c) for vv, c in pn_terms],
                                     GE, pn_const, conds=s_conds)
                if cls_o:
                    model.add_constr(f"tab2[{i},{operand},s2,{v}]",
                                     [(pv, 1), (lv, -(v - 1)), (tvar, -2)]
                                     + [(vv, -c) for vv, c in pn_terms],
                                     GE, pn_const, conds=s_conds)
                # double-buffered main rows
                if ovl is not None:
                    mtp = ctx.maxtp[(i, operand)]
                    if not cls_o and v >= 3:
                        model.add_constr(f"tab2[{i},{operand},d1,{v}]",
                                         [(pv, 1), (lv, -(v - 3)), (tvar, -2), (mtp, -1)],
                                         GE, 0, conds=[sc, (ovl, 1)])
                    if cls_o and v >= 2:
                        mtl = ctx.maxtl[(i, operand)]
                        model.add_constr(f"tab2[{i},{operand},d2,{v}]",
                                         [(pv, 1), (lv, -(v - 2)), (tvar, -1),
                                          (mtl, -1), (mtp, -1)],
                                         GE, 0, conds=[sc, (ovl, 1)])
            if xfer is not None:
                # degenerate-count clamps: exposed transfers around the nest
                c_conds = [(xfer, 1)] + ([(ovl, 0)] if ovl is not None else [])
                model.add_constr(f"tab2[{i},{operand},cs]",
                                 [(pv, 1), (tvar, -2)] + [(vv, -c) for vv, c in pn_terms],
                                 GE, pn_const, conds=c_conds)
                if ovl is not None:
                    model.add_constr(f"tab2[{i},{operand},cd]",
                                     [(pv, 1), (tvar, -1)] + [(vv, -c) for vv, c in pn_terms],
                                     GE, pn_const, conds=[(ovl, 1)])
            if ovl is not None and cls_o:
                mtl = ctx.maxtl[(i, operand)]
                model.add_constr(f"mx.tl.t[{i},{operand}]", [(mtl, 1), (tvar, -1)], GE, 0)
                model.add_constr(f"mx.tl.l[{i},{operand}]", [(mtl, 1), (lv, -1)], GE, 0)


def build_objective(model: MipModel, ctx: BuildContext, weights: ObjectiveWeights) -> MipModel:
    """Worst-operand latency minus the weighted deep-storage reward."""
    ctx.weights = weights
    S = ctx.n_slots
    ctx.lmax = model.add_int("lmax", ctx.mvm_cycles,
                             ctx.p_ub[0] if S else ctx.mvm_cycles)
    for operand in OPERANDS:
        if S:
            model.add_constr(f"obj.max[{operand}]",
                             [(ctx.lmax, 1), (ctx.pcyc[(0, operand)], -1)], GE, 0)
    obj = {ctx.lmax: weights.latency}
    for (m, operand), sv in ctx.size.items():
        if m > 0:
            obj[sv] = obj.get(sv, Fraction(0)) - weights.locality * m
    model.set_objective(obj)
    return model


def build_model(layer: LayerShape, factors: FactorSet, arch: ArchSpec,
                table: CandidateTable, weights: ObjectiveWeights = None) -> tuple:
    """Full model for one layer; returns (model, context)."""
    weights = weights or ObjectiveWeights()
    model, ctx = build_mapping_constraints(factors, arch, table)
    build_size_constraints(model, ctx)
    build_latency_constraints(model, ctx)
    build_objective(model, ctx, weights)
    return model, ctx
