"""Solver-agnostic mixed-integer model container.

All variables are bounded integers (binaries are 0/1).  Constraints are
linear rows, optionally guarded by indicator conditions: a guarded row is
enforced only when every listed binary takes its listed value.  The builtin
solver honors guards natively; the MPS exporter lowers them to big-M rows
with per-row M values derived from the variable bounds.

The objective is always minimized and may carry exact rational
coefficients; everything else is pure integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import ModelBuildError

GE, LE, EQ = ">=", "<=", "=="


@dataclass(frozen=True)
class Var:
    index: int
    name: str
    lb: int
    ub: int
    binary: bool


@dataclass(frozen=True)
class Constr:
    """Linear row: sum(coef * var) sense rhs, enforced when `conds` hold.

    `conds` is a tuple of (var_index, required_value) over binaries; empty
    means always enforced.
    """

    index: int
    name: str
    terms: tuple
    sense: str
    rhs: int
    conds: tuple = ()


class MipModel:
    """Mutable model under construction; immutable enough once solved."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.vars: list = []
        self.constraints: list = []
        self.groups: list = []        # exactly-one groups: tuples of var indices
        self.group_of: dict = {}      # var index -> group index
        self.objective: dict = {}     # var index -> Fraction coefficient
        self.objective_const: Fraction = Fraction(0)
        self._by_name: dict = {}

    # ------------------------------------------------------------------ vars

    def add_var(self, name: str, lb: int, ub: int, binary: bool = False) -> int:
        if name in self._by_name:
            raise ModelBuildError(f"duplicate variable name {name!r}")
        if lb > ub:
            raise ModelBuildError(f"variable {name!r} has empty domain [{lb}, {ub}]")
        idx = len(self.vars)
        self.vars.append(Var(idx, name, lb, ub, binary))
        self._by_name[name] = idx
        return idx

    def add_binary(self, name: str) -> int:
        return self.add_var(name, 0, 1, binary=True)

    def add_int(self, name: str, lb: int, ub: int) -> int:
        return self.add_var(name, lb, ub, binary=False)

    def var_index(self, name: str) -> int:
        return self._by_name[name]

    def var_name(self, idx: int) -> str:
        return self.vars[idx].name

    # ----------------------------------------------------------- constraints

    @staticmethod
    def _merge_terms(terms) -> tuple:
        acc: dict = {}
        for vidx, coef in terms:
            if coef == 0:
                continue
            acc[vidx] = acc.get(vidx, 0) + coef
        return tuple(sorted((v, c) for v, c in acc.items() if c != 0))

    def add_constr(self, name: str, terms, sense: str, rhs: int, conds=()) -> int:
        if sense not in (GE, LE, EQ):
            raise ModelBuildError(f"constraint {name!r}: bad sense {sense!r}")
        for vidx, val in conds:
            if not self.vars[vidx].binary:
                raise ModelBuildError(f"constraint {name!r}: guard on non-binary variable")
            if val not in (0, 1):
                raise ModelBuildError(f"constraint {name!r}: guard value must be 0 or 1")
        idx = len(self.constraints)
        self.constraints.append(Constr(idx, name, self._merge_terms(terms),
                                       sense, rhs, tuple(conds)))
        return idx

    def add_exactly_one(self, name: str, var_indices) -> int:
        """Register an exactly-one group and its defining row."""
        var_indices = tuple(var_indices)
        if not var_indices:
            raise ModelBuildError(f"group {name!r} is empty")
        gid = len(self.groups)
        self.groups.append(var_indices)
        for v in var_indices:
            if v in self.group_of:
                raise ModelBuildError(
                    f"variable {self.vars[v].name!r} already belongs to a group")
            self.group_of[v] = gid
        self.add_constr(name, [(v, 1) for v in var_indices], EQ, 1)
        return gid

    # Boolean gadgets.  All operands must be binaries; outputs are exact.

    def add_and(self, name: str, out: int, ins) -> None:
        """out = AND(ins)."""
        ins = list(ins)
        self.add_constr(f"{name}.lb", [(out, 1)] + [(v, -1) for v in ins],
                        GE, 1 - len(ins))
        for k, v in enumerate(ins):
            self.add_constr(f"{name}.ub{k}", [(out, 1), (v, -1)], LE, 0)

    def add_or(self, name: str, out: int, ins) -> None:
        """out = OR(ins)."""
        ins = list(ins)
        for k, v in enumerate(ins):
            self.add_constr(f"{name}.lb{k}", [(out, 1), (v, -1)], GE, 0)
        self.add_constr(f"{name}.ub", [(out, 1)] + [(v, -1) for v in ins], LE, 0)

    def add_sum_eq(self, name: str, out: int, ins) -> None:
        """out = sum(ins); caller guarantees the sum stays within out's bounds."""
        self.add_constr(name, [(out, 1)] + [(v, -1) for v in ins], EQ, 0)

    def add_max_lb(self, name: str, out: int, arg_terms) -> None:
        """out >= each argument (argument = list of terms plus constant).

        Lower-bound-only encoding of a maximum; exact at any minimum-pressure
        solution and under least-fixpoint completion.
        """
        for k, (terms, const) in enumerate(arg_terms):
            row = [(out, 1)] + [(v, -c) for v, c in terms]
            self.add_constr(f"{name}.arg{k}", row, GE, const)

    # -------------------------------------------------------------- checking

    def check_assignment(self, values) -> list:
        """Names of violated constraints under a full assignment.

        `values` is indexable by variable index.  Guarded rows are checked
        only when their guard condition holds.
        """
        bad = []
        for var in self.vars:
            v = values[var.index]
            if not (var.lb <= v <= var.ub):
                bad.append(f"bounds[{var.name}]")
        for con in self.constraints:
            if any(values[v] != want for v, want in con.conds):
                continue
            lhs = sum(coef * values[v] for v, coef in con.terms)
            ok = (lhs >= con.rhs if con.sense == GE else
                  lhs <= con.rhs if con.sense == LE else lhs == con.rhs)
            if not ok:
                bad.append(con.name)
        return bad

    def eval_objective(self, values) -> Fraction:
        total = self.objective_const
        for vidx, coef in self.objective.items():
            total += coef * values[vidx]
        return total

    def set_objective(self, terms, const: Fraction = Fraction(0)) -> None:
        self.objective = {v: Fraction(c) for v, c in terms.items() if c != 0}
        self.objective_const = Fraction(const)

    # ------------------------------------------------------------------ misc

    def clone(self) -> "MipModel":
        """Copy sharing immutable rows; adding to the copy leaves self intact."""
        other = MipModel(self.name)
        other.vars = list(self.vars)
        other.constraints = list(self.constraints)
        other.groups = list(self.groups)
        other.group_of = dict(self.group_of)
        other.objective = dict(self.objective)
        other.objective_const = self.objective_const
        other._by_name = dict(self._by_name)
        return other

    def stats(self) -> dict:
        return {
            "vars": len(self.vars),
            "binaries": sum(1 for v in self.vars if v.binary),
            "constraints": len(self.constraints),
            "groups": len(self.groups),
        }
