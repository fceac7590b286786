"""Model solving: exact builtin branch-and-bound plus external adapters.

The builtin solver does depth-first search over the binaries in declaration
order (0-branch first) with integer bound propagation.  Guarded rows are
handled natively: enforced once their guards are fixed, used for conflict
deduction when a single guard is still open.  Exactly-one groups propagate
as domains, which keeps the large one-hot selections from ever being
branched on.  Once all binaries are fixed, the remaining integer system is
a monotone chain of lower bounds, so its least fixpoint (every variable at
its propagated lower bound) is the exact latency recursion.

External solving goes through MPS export, a user-supplied command template,
and a `name value` solution file; parsed solutions are re-anchored by
fixing the binaries and recomputing the integer completion, so bit-exact
cycle counts survive solvers with loose numeric tolerances.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import SolveError
from .mipmodel import EQ, GE, LE, MipModel

_INF = float("inf")


@dataclass(frozen=True)
class SolveConfig:
    backend: str = "builtin"
    time_limit_s: int = 300
    external_command: Optional[str] = None
    mip_gap: Fraction = Fraction(0)

    def __post_init__(self):
        if self.backend not in ("builtin", "external"):
            raise SolveError(f"unknown backend {self.backend!r}")
        if self.time_limit_s < 1:
            raise SolveError("time limit must be at least 1 second")
        gap = self.mip_gap if isinstance(self.mip_gap, Fraction) else Fraction(str(self.mip_gap))
        object.__setattr__(self, "mip_gap", gap)
        if gap < 0:
            raise SolveError("mip_gap must be non-negative")


@dataclass
class SolveResult:
    status: str                      # optimal | feasible | infeasible | timeout
    values: Optional[list] = None    # per-variable assignment when feasible
    objective: Optional[Fraction] = None
    bound: Optional[Fraction] = None
    wall_time_s: float = 0.0
    nodes: int = 0
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.values is not None


class _Propagator:
    """Shared propagation engine over a MipModel."""

    def __init__(self, model: MipModel):
        self.model = model
        self.n = len(model.vars)
        self.lb = [v.lb for v in model.vars]
        self.ub = [v.ub for v in model.vars]
        self.trail: list = []

        # group state: fixed member (or -1) and alive count
        self.g_fixed = [-1] * len(model.groups)
        self.g_alive = [len(g) for g in model.groups]
        self.group_of = model.group_of

        # per-constraint precomputation
        self.cons = model.constraints
        self.watch: list = [[] for _ in range(self.n)]
        self.c_loose: list = []
        self.c_groups: list = []
        self.generation = 0
        self._grange_cache: dict = {}
        for con in self.cons:
            loose = []
            grouped: dict = {}
            for v, c in con.terms:
                gid = self.group_of.get(v)
                if gid is None:
                    loose.append((v, c))
                else:
                    grouped.setdefault(gid, {})[v] = c
            # a group fully covering an exactly-one row carries no signal
            self.c_loose.append(tuple(loose))
            gl = []
            for gid, tmap in grouped.items():
                full = all(m in tmap for m in model.groups[gid])
                gl.append((gid, tmap, full))
            self.c_groups.append(tuple(gl))
            for v, _ in con.terms:
                self.watch[v].append(con.index)
            for v, _ in con.conds:
                self.watch[v].append(con.index)
        self.queue: list = []
        self.queued = [False] * len(self.cons)

    # ------------------------------------------------------------- trailing

    def mark(self) -> int:
        return len(self.trail)

    def undo_to(self, mark: int):
        self.generation += 1
        while len(self.trail) > mark:
            kind, a, b, c = self.trail.pop()
            if kind == 0:
                self.lb[a] = b
                self.ub[a] = c
            else:
                self.g_fixed[a] = b
                self.g_alive[a] = c

    # ------------------------------------------------------------ set bounds

    def set_lb(self, v: int, val: int) -> bool:
        if val <= self.lb[v]:
            return True
        if val > self.ub[v]:
            return False
        self.trail.append((0, v, self.lb[v], self.ub[v]))
        self.lb[v] = val
        self._touch(v)
        if val == 1 and self.model.vars[v].binary:
            gid = self.group_of.get(v)
            if gid is not None and not self._group_member_one(gid, v):
                return False
        return True

    def set_ub(self, v: int, val: int) -> bool:
        if val >= self.ub[v]:
            return True
        if val < self.lb[v]:
            return False
        self.trail.append((0, v, self.lb[v], self.ub[v]))
        self.ub[v] = val
        self._touch(v)
        if val == 0 and self.model.vars[v].binary:
            gid = self.group_of.get(v)
            if gid is not None and not self._group_member_dead(gid):
                return False
        return True

    def _touch(self, v: int):
        for ci in self.watch[v]:
            if not self.queued[ci]:
                self.queued[ci] = True
                self.queue.append(ci)

    def _group_member_one(self, gid: int, v: int) -> bool:
        if self.g_fixed[gid] == v:
            return True
        if self.g_fixed[gid] != -1:
            return False
        self.trail.append((1, gid, self.g_fixed[gid], self.g_alive[gid]))
        self.g_fixed[gid] = v
        for m in self.model.groups[gid]:
            if m != v and not self.set_ub(m, 0):
                return False
        return True

    def _group_member_dead(self, gid: int) -> bool:
        self.trail.append((1, gid, self.g_fixed[gid], self.g_alive[gid]))
        self.g_alive[gid] -= 1
        if self.g_fixed[gid] != -1:
            return True
        if self.g_alive[gid] == 0:
            return False
        if self.g_alive[gid] == 1:
            for m in self.model.groups[gid]:
                if self.ub[m] >= 1:
                    return self.set_lb(m, 1)
            return False
        return True

    # ----------------------------------------------------------- activities

    def _group_range(self, gid: int, tmap: dict, full: bool, key=None):
        """Contribution range of an exactly-one group inside one constraint.

        Within one propagation phase (no backtracking) the alive set shrinks
        monotonically, so (generation, alive count) identifies it: ranges are
        cached on that pair to keep wide one-hot rows near O(1) per visit.
        """
        fixed = self.g_fixed[gid]
        if fixed != -1:
            c = tmap.get(fixed, 0)
            return c, c
        if key is not None:
            hit = self._grange_cache.get(key)
            if hit is not None and hit[0] == self.generation and hit[1] == self.g_alive[gid]:
                return hit[2], hit[3]
        lo = None
        hi = None
        covered_alive = 0
        for m, c in tmap.items():
            if self.ub[m] >= 1:
                covered_alive += 1
                lo = c if lo is None else min(lo, c)
                hi = c if hi is None else max(hi, c)
        if not full and covered_alive < self.g_alive[gid]:
            lo = 0 if lo is None else min(lo, 0)
            hi = 0 if hi is None else max(hi, 0)
        if lo is None:
            lo = hi = 0
        if key is not None:
            self._grange_cache[key] = (self.generation, self.g_alive[gid], lo, hi)
        return lo, hi

    def _activity(self, ci: int):
        lo = hi = 0
        lb = self.lb
        ub = self.ub
        for v, c in self.c_loose[ci]:
            if c > 0:
                lo += c * lb[v]
                hi += c * ub[v]
            else:
                lo += c * ub[v]
                hi += c * lb[v]
        for gid, tmap, full in self.c_groups[ci]:
            glo, ghi = self._group_range(gid, tmap, full, key=(ci, gid))
            lo += glo
            hi += ghi
        return lo, hi

    def _cond_state(self, con):
        """1 = active, 0 = inactive, (None, open_var, want) = undecided."""
        open_var = None
        want = None
        for v, val in con.conds:
            if self.lb[v] == self.ub[v]:
                if self.lb[v] != val:
                    return 0, None, None
            elif open_var is None:
                open_var = v
                want = val
            else:
                return None, -1, None   # several open guards: no deduction
        if open_var is not None:
            return None, open_var, want
        return 1, None, None

    def _propagate_row(self, con, enforce: bool, open_var=None, open_want=None) -> bool:
        """Tighten bounds (enforce) or refute the open guard when impossible."""
        sense = con.sense
        lo, hi = self._activity(con.index)
        ge = sense in (GE, EQ)
        le = sense in (LE, EQ)
        if le and lo > con.rhs:
            if enforce:
                return False
            return self._refute(open_var, open_want)
        if ge and hi < con.rhs:
            if enforce:
                return False
            return self._refute(open_var, open_want)
        if not enforce:
            return True
        # nothing to tighten when even the worst case satisfies the row
        if (not ge or lo >= con.rhs) and (not le or hi <= con.rhs):
            return True

        # loose-term tightening
        for v, c in self.c_loose[con.index]:
            if c > 0:
                base_lo = lo - c * self.lb[v]
                base_hi = hi - c * self.ub[v]
                if le and not self.set_ub(v, (con.rhs - base_lo) // c):
                    return False
                if ge and not self.set_lb(v, -((con.rhs - base_hi) // -c)):
                    return False
            else:
                base_lo = lo - c * self.ub[v]
                base_hi = hi - c * self.lb[v]
                if le and not self.set_lb(v, -((con.rhs - base_lo) // -c)):
                    return False
                if ge and not self.set_ub(v, (con.rhs - base_hi) // c):
                    return False
            lo, hi = self._activity(con.index)

        # group filtering: a member whose choice alone breaks the row dies
        for gid, tmap, full in self.c_groups[con.index]:
            if self.g_fixed[gid] != -1:
                continue
            glo, ghi = self._group_range(gid, tmap, full, key=(con.index, gid))
            rest_lo = lo - glo
            rest_hi = hi - ghi
            # no member can die unless even the group's extreme breaks the row
            if (not le or rest_lo + ghi <= con.rhs) \
                    and (not ge or rest_hi + glo >= con.rhs):
                continue
            for m in self.model.groups[gid]:
                if self.ub[m] < 1 or self.lb[m] == 1:
                    continue
                c = tmap.get(m, 0)
                if (le and rest_lo + c > con.rhs) or (ge and rest_hi + c < con.rhs):
                    if not self.set_ub(m, 0):
                        return False
            lo, hi = self._activity(con.index)
        return True

    def _refute(self, open_var, open_want) -> bool:
        if open_var is None:
            return False            # always-on row is plainly violated
        if open_var == -1:
            return True             # several open guards: nothing to conclude
        if open_want == 1:
            return self.set_ub(open_var, 0)
        return self.set_lb(open_var, 1)

    def propagate(self) -> bool:
        while self.queue:
            ci = self.queue.pop()
            self.queued[ci] = False
            con = self.cons[ci]
            state, open_var, open_want = self._cond_state(con)
            if state == 0:
                continue
            if state == 1:
                if not self._propagate_row(con, enforce=True):
                    return False
            else:
                if not self._propagate_row(con, enforce=False,
                                           open_var=open_var, open_want=open_want):
                    return False
        return True

    def enqueue_all(self) -> bool:
        for ci in range(len(self.cons)):
            if not self.queued[ci]:
                self.queued[ci] = True
                self.queue.append(ci)
        # groups already down to one candidate produce no member event, so
        # they are seeded here
        for gid, members in enumerate(self.model.groups):
            if self.g_fixed[gid] == -1:
                alive = [m for m in members if self.ub[m] >= 1]
                if not alive:
                    return False
                if len(alive) == 1 and not self.set_lb(alive[0], 1):
                    return False
        return True

    def reset_queue(self):
        for ci in self.queue:
            self.queued[ci] = False
        self.queue.clear()


def _objective_lb(model: MipModel, prop: _Propagator) -> Fraction:
    total = model.objective_const
    for v, c in model.objective.items():
        total += c * (prop.lb[v] if c > 0 else prop.ub[v])
    return total


class BuiltinSolver:
    """Deterministic DFS branch-and-bound over the model binaries.

    A greedy 1-first dive (same declaration order) runs first to seed the
    incumbent: committing a factor to the first open slot or level satisfies
    the packing/uniqueness structure immediately, so the dive reaches a leaf
    in roughly one decision per variable.  The main search then follows the
    canonical 0-first depth-first order with incumbent pruning.
    """

    def __init__(self, model: MipModel):
        self.model = model
        self.prop = _Propagator(model)
        self.branch_vars = [v.index for v in model.vars if v.binary]

    def _completion_values(self) -> list:
        return [self.prop.lb[i] for i in range(self.prop.n)]

    def _dive(self, order: list, deadline: float, node_budget: int = 30000):
        """Greedy 1-first dive over `order`; feasible assignment or None.

        Committing variables to 1 satisfies the exactly-one structure in one
        step per variable, so a leaf is normally a straight walk; bounded
        backtracking absorbs local conflicts (full axes, tight capacities).
        """
        prop = _Propagator(self.model)
        if not prop.enqueue_all() or not prop.propagate():
            return "infeasible"
        stack = []
        nodes = 0
        ptr = 0
        while True:
            nodes += 1
            if nodes > node_budget or (nodes % 64 == 0 and time.monotonic() > deadline):
                return None
            v = None
            while ptr < len(order):
                cand = order[ptr]
                if prop.lb[cand] != prop.ub[cand]:
                    v = cand
                    break
                ptr += 1
            if v is None:
                values = [prop.lb[i] for i in range(prop.n)]
                if self.model.check_assignment(values):
                    return None
                return values
            mark = prop.mark()
            prop.reset_queue()
            if prop.set_lb(v, 1) and prop.propagate():
                stack.append((mark, v, ptr, False))
                continue
            prop.undo_to(mark)
            prop.reset_queue()
            if prop.set_ub(v, 0) and prop.propagate():
                stack.append((mark, v, ptr, True))
                continue
            # both values fail: backtrack to the nearest untried 0-branch
            while stack:
                mark, v, ptr, zero_tried = stack.pop()
                prop.undo_to(mark)
                prop.reset_queue()
                if not zero_tried and prop.set_ub(v, 0) and prop.propagate():
                    stack.append((mark, v, ptr, True))
                    break
            else:
                return "infeasible"

    def _dive_orders(self) -> list:
        """Deterministic dive heuristics: spatial-greedy, then plain order."""
        names = self.model.vars
        spatial_first = sorted(
            self.branch_vars,
            key=lambda v: (0 if names[v].name.startswith("splace") else 1, v))
        return [spatial_first, self.branch_vars]

    def solve(self, cfg: SolveConfig, warm_values=None) -> SolveResult:
        start = time.monotonic()
        deadline = start + cfg.time_limit_s
        model = self.model
        prop = self.prop

        incumbent = None
        incumbent_obj = None
        if warm_values is not None:
            if model.check_assignment(warm_values):
                raise SolveError("warm-start assignment violates the model")
            incumbent = list(warm_values)
            incumbent_obj = model.eval_objective(warm_values)

        for order in self._dive_orders():
            dive_deadline = min(deadline, time.monotonic() + max(2.0, cfg.time_limit_s / 4))
            dived = self._dive(order, dive_deadline)
            if dived == "infeasible":
                return SolveResult(status="infeasible",
                                   wall_time_s=time.monotonic() - start)
            if dived is not None:
                obj = model.eval_objective(dived)
                if incumbent_obj is None or obj < incumbent_obj:
                    incumbent, incumbent_obj = list(dived), obj
                break   # later orders are fallbacks for failed dives

        if not prop.enqueue_all() or not prop.propagate():
            return SolveResult(status="infeasible", bound=None,
                               wall_time_s=time.monotonic() - start)

        nodes = 0
        timed_out = False
        # stack entries: [trail_mark, var, next_value, branch_ptr, node_lb]
        stack: list = []
        ptr = 0

        def find_branch(p):
            while p < len(self.branch_vars):
                v = self.branch_vars[p]
                if prop.lb[v] != prop.ub[v]:
                    return p
                p += 1
            return -1

        descend = True
        while True:
            if descend:
                nodes += 1
                if nodes % 128 == 0 and time.monotonic() > deadline:
                    timed_out = True
                    break
                node_lb = _objective_lb(model, prop)
                prune = (incumbent_obj is not None and node_lb >= incumbent_obj)
                if not prune:
                    p = find_branch(ptr)
                    if p == -1:
                        values = self._completion_values()
                        if not model.check_assignment(values):
                            obj = model.eval_objective(values)
                            if incumbent_obj is None or obj < incumbent_obj:
                                incumbent = values
                                incumbent_obj = obj
                        prune = True
                    else:
                        v = self.branch_vars[p]
                        stack.append([prop.mark(), v, 1, p, node_lb])
                        prop.reset_queue()
                        ok = prop.set_ub(v, 0) and prop.propagate()
                        ptr = p
                        descend = ok
                        if not ok:
                            descend = False
                        continue
                if prune:
                    descend = False
                    continue
            else:
                if not stack:
                    break
                frame = stack[-1]
                prop.undo_to(frame[0])
                prop.reset_queue()
                if frame[2] is None:
                    stack.pop()
                    ptr = frame[3]
                    continue
                v, val = frame[1], frame[2]
                frame[2] = None
                nodes += 1
                if nodes % 128 == 0 and time.monotonic() > deadline:
                    timed_out = True
                    break
                ok = prop.set_lb(v, val) and prop.propagate()
                ptr = frame[3]
                descend = ok

        wall = time.monotonic() - start
        if timed_out:
            open_lbs = [f[4] for f in stack if f[2] is not None]
            bound = min(open_lbs) if open_lbs else incumbent_obj
            if incumbent is None:
                return SolveResult(status="timeout", bound=bound,
                                   wall_time_s=wall, nodes=nodes,
                                   message="time limit reached without incumbent")
            return SolveResult(status="feasible", values=incumbent,
                               objective=incumbent_obj, bound=bound,
                               wall_time_s=wall, nodes=nodes,
                               message="time limit reached; incumbent returned")
        if incumbent is None:
            return SolveResult(status="infeasible", wall_time_s=wall, nodes=nodes)
        return SolveResult(status="optimal", values=incumbent,
                           objective=incumbent_obj, bound=incumbent_obj,
                           wall_time_s=wall, nodes=nodes)


def solve_builtin(model: MipModel, cfg: SolveConfig, warm_values=None) -> SolveResult:
    return BuiltinSolver(model).solve(cfg, warm_values=warm_values)


def min_completion(model: MipModel, binary_values: dict) -> list:
    """Exact integer completion from a (possibly partial) binary fixing.

    Fixes the given binaries and propagates to the least fixpoint; every
    remaining binary must come out implied, and all integers land on their
    lower bounds (the exact latency recursion).  Raises SolveError when the
    fixing is infeasible or leaves binaries undetermined.
    """
    prop = _Propagator(model)
    for vidx, val in binary_values.items():
        if not model.vars[vidx].binary:
            raise SolveError(f"{model.vars[vidx].name} is not a binary variable")
        if not (prop.set_lb(vidx, val) and prop.set_ub(vidx, val)):
            raise SolveError(f"binary fixing of {model.vars[vidx].name} is infeasible")
    if not prop.enqueue_all() or not prop.propagate():
        raise SolveError("assignment is infeasible under propagation")
    loose = [v.name for v in model.vars
             if v.binary and prop.lb[v.index] != prop.ub[v.index]]
    if loose:
        raise SolveError(f"binaries left undetermined by the fixing: {loose[:5]}")
    values = [prop.lb[i] for i in range(prop.n)]
    bad = model.check_assignment(values)
    if bad:
        raise SolveError(f"completion violates constraints: {bad[:5]}")
    return values


# --------------------------------------------------------------- external

def _parse_status_hints(text: str) -> Optional[str]:
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        low = line.lower()
        if "infeasible" in low:
            return "infeasible"
        if "optimal" in low:
            return "optimal"
    return None


def solve_external(model: MipModel, cfg: SolveConfig, keep_dir=None) -> SolveResult:
    """Export to MPS, run the external command, parse and re-anchor."""
    from . import mps as mps_mod

    if not cfg.external_command:
        raise SolveError("external backend selected but no solver command configured")
    start = time.monotonic()
    tmp = keep_dir or tempfile.mkdtemp(prefix="cimopt_")
    mps_path = os.path.join(tmp, f"{model.name}.mps")
    sol_path = os.path.join(tmp, f"{model.name}.sol")
    text, mangle = mps_mod.export_mps(model)
    with open(mps_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    mps_mod.write_mangle_table(mangle, mps_path + ".names.json")

    cmd = cfg.external_command.format(mps=mps_path, sol=sol_path)
    try:
        proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True,
                              timeout=cfg.time_limit_s + 30)
    except FileNotFoundError as exc:
        raise SolveError(f"external solver command not found: {exc}") from exc
    except subprocess.TimeoutExpired:
        proc = None

    wall = time.monotonic() - start
    if not os.path.exists(sol_path):
        detail = "" if proc is None else f" (exit code {proc.returncode})"
        return SolveResult(status="timeout", wall_time_s=wall,
                           message=f"external solver produced no solution file{detail}")
    with open(sol_path, "r", encoding="utf-8") as fh:
        sol_text = fh.read()
    hint = _parse_status_hints(sol_text)
    if hint == "infeasible":
        return SolveResult(status="infeasible", wall_time_s=wall)
    named, warnings = mps_mod.parse_solution(sol_text, mangle)
    binary_values = {}
    for var in model.vars:
        if var.binary:
            raw = named.get(var.name, 0)
            binary_values[var.index] = 1 if raw >= 0.5 else 0
    values = min_completion(model, binary_values)
    obj = model.eval_objective(values)
    status = "optimal" if hint == "optimal" else "feasible"
    return SolveResult(status=status, values=values, objective=obj,
                       bound=obj if status == "optimal" else None,
                       wall_time_s=wall,
                       message="; ".join(warnings))


def solve(model: MipModel, cfg: SolveConfig, warm_values=None) -> SolveResult:
    """Dispatch to a backend and independently re-verify any solution."""
    if cfg.backend == "builtin":
        result = solve_builtin(model, cfg, warm_values=warm_values)
    else:
        result = solve_external(model, cfg)
    if result.has_solution:
        bad = model.check_assignment(result.values)
        if bad:
            raise SolveError(f"backend returned an infeasible assignment: {bad[:5]}")
        if result.objective != model.eval_objective(result.values):
            raise SolveError("backend objective does not match the assignment")
    return result
