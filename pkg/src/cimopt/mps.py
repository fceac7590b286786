"""Fixed-format MPS export, import, and solution-file parsing.

Guarded rows are lowered to big-M form on export, with each row's M derived
from the variable bounds (never a global constant).  Variable and row names
are mangled to eight characters (X/R plus a 7-digit index); the mangling
table ships alongside the model so external solutions can be mapped back.

The solution-file contract is one `name value` pair per line; `#` lines are
comments (a leading `# ... optimal` or `# ... infeasible` is understood as
a status hint).  Missing variables default to 0 with a warning; unknown
names are an error.
"""

from __future__ import annotations

import json
from decimal import Decimal
from fractions import Fraction

from .errors import SolveError
from .mipmodel import EQ, GE, LE, MipModel

_DEFAULT_UB = 10 ** 18


def _num(value) -> str:
    """Exact decimal rendering of an int or Fraction."""
    if isinstance(value, int):
        return str(value)
    frac = Fraction(value)
    if frac.denominator == 1:
        return str(frac.numerator)
    # exact when the denominator is 2^a * 5^b, which holds for all shipped
    # objective weights; anything else falls back to a float repr
    den = frac.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return repr(float(frac))
    places = max(twos, fives)
    digits = abs(frac.numerator) * (10 ** places) // frac.denominator
    text = str(digits).rjust(places + 1, "0")
    whole, dot = text[:-places], text[-places:]
    sign = "-" if frac.numerator < 0 else ""
    return f"{sign}{whole}.{dot}"


def _entry(f1: str, f2: str, f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    line = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:<12}  {f5:<8}  {f6:<12}"
    return line.rstrip()


def _activity_range(model: MipModel, terms):
    lo = hi = 0
    for v, c in terms:
        var = model.vars[v]
        if c > 0:
            lo += c * var.lb
            hi += c * var.ub
        else:
            lo += c * var.ub
            hi += c * var.lb
    return lo, hi


def _lowered_rows(model: MipModel):
    """Yield (sense, terms, rhs, source_name) rows with guards big-M'ed away."""
    for con in model.constraints:
        senses = [GE, LE] if con.sense == EQ and con.conds else [con.sense]
        for sense in senses:
            terms = list(con.terms)
            rhs = con.rhs
            if con.conds:
                lo, hi = _activity_range(model, terms)
                big_m = max(0, rhs - lo) if sense == GE else max(0, hi - rhs)
                for bvar, want in con.conds:
                    if sense == GE:
                        if want == 1:
                            terms.append((bvar, -big_m))
                            rhs -= big_m
                        else:
                            terms.append((bvar, big_m))
                    else:
                        if want == 1:
                            terms.append((bvar, big_m))
                            rhs += big_m
                        else:
                            terms.append((bvar, -big_m))
                terms = MipModel._merge_terms(terms)
            tag = "" if len(senses) == 1 else (".ge" if sense == GE else ".le")
            yield sense, tuple(terms), rhs, con.name + tag


def export_mps(model: MipModel):
    """Render the model; returns (text, mangling table)."""
    if len(model.vars) >= 10 ** 7:
        raise SolveError("too many variables for 8-character name mangling")
    col_name = {v.index: f"X{v.index:07d}" for v in model.vars}
    rows = list(_lowered_rows(model))
    if len(rows) >= 10 ** 7:
        raise SolveError("too many rows for 8-character name mangling")
    mangle = {
        "cols": {col_name[v.index]: v.name for v in model.vars},
        "rows": {f"R{i:07d}": name for i, (_, _, _, name) in enumerate(rows)},
    }

    out = [f"NAME          {model.name[:60]}", "ROWS", _entry("N", "COST")]
    sense_tag = {GE: "G", LE: "L", EQ: "E"}
    for i, (sense, _, _, _) in enumerate(rows):
        out.append(_entry(sense_tag[sense], f"R{i:07d}"))

    out.append("COLUMNS")
    out.append(_entry("", "MARKER", "", "'MARKER'", "", "'INTORG'"))
    by_col: dict = {v.index: [] for v in model.vars}
    for i, (_, terms, _, _) in enumerate(rows):
        for v, c in terms:
            by_col[v].append((f"R{i:07d}", c))
    for v in model.vars:
        obj = model.objective.get(v.index)
        if obj:
            out.append(_entry("", col_name[v.index], "COST", _num(obj)))
        for row_name, coef in by_col[v.index]:
            out.append(_entry("", col_name[v.index], row_name, _num(coef)))
    out.append(_entry("", "MARKER", "", "'MARKER'", "", "'INTEND'"))

    out.append("RHS")
    for i, (_, _, rhs, _) in enumerate(rows):
        if rhs != 0:
            out.append(_entry("", "RHS", f"R{i:07d}", _num(rhs)))

    out.append("RANGES")

    out.append("BOUNDS")
    for v in model.vars:
        out.append(_entry("LO", "BND", col_name[v.index], _num(v.lb)))
        out.append(_entry("UP", "BND", col_name[v.index], _num(v.ub)))
    out.append("ENDATA")
    return "\n".join(out) + "\n", mangle


def write_mangle_table(mangle: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mangle, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_solution(text: str, mangle: dict = None):
    """Parse `name value` lines; returns ({model_var_name: float}, warnings).

    Names may be mangled (mapped through the table) or original.  Unknown
    names raise; the caller defaults missing variables to 0.
    """
    cols = (mangle or {}).get("cols", {})
    known_orig = set(cols.values())
    values = {}
    warnings = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolveError(f"solution line {lineno}: expected 'name value', got {line!r}")
        name, raw = parts
        try:
            val = float(raw)
        except ValueError as exc:
            raise SolveError(f"solution line {lineno}: bad value {raw!r}") from exc
        if name in cols:
            values[cols[name]] = val
        elif not cols or name in known_orig:
            values[name] = val
        else:
            raise SolveError(f"solution line {lineno}: unknown variable {name!r}")
    return values, warnings


def write_solution_file(path, names, values, status: str, objective=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# status {status}\n")
        if objective is not None:
            fh.write(f"# objective {objective}\n")
        if values is not None:
            for name, val in zip(names, values):
                fh.write(f"{name} {val}\n")


def read_mps(text: str) -> MipModel:
    """Parse fixed/free MPS back into a model (names as written in the file).

    Supports the subset this package emits plus RANGES; every column is
    treated as an integer.  Used by the `solve-mps` CLI verb so the package
    can act as its own external solver in round-trip tests.
    """
    section = None
    model = MipModel("imported")
    row_sense: dict = {}
    row_terms: dict = {}
    row_rhs: dict = {}
    row_range: dict = {}
    obj_row = None
    obj_coefs: dict = {}
    var_idx: dict = {}
    bounds: dict = {}
    order: list = []

    def get_var(name):
        if name not in var_idx:
            var_idx[name] = len(var_idx)
            bounds[name] = [0, _DEFAULT_UB]
        return var_idx[name]

    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        if not raw[0].isspace():
            word = raw.split()[0].upper()
            if word in ("NAME",):
                parts = raw.split()
                if len(parts) > 1:
                    model.name = parts[1]
                section = "NAME"
            elif word in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"):
                section = word
            else:
                raise SolveError(f"unknown MPS section {word!r}")
            continue
        parts = raw.split()
        if section == "ROWS":
            sense, name = parts[0].upper(), parts[1]
            if sense == "N":
                if obj_row is None:
                    obj_row = name
            else:
                row_sense[name] = {"G": GE, "L": LE, "E": EQ}[sense]
                row_terms[name] = []
                order.append(name)
        elif section == "COLUMNS":
            if len(parts) >= 3 and parts[1] == "'MARKER'":
                continue
            col = parts[0]
            get_var(col)
            for j in range(1, len(parts) - 1, 2):
                row, val = parts[j], Fraction(Decimal(parts[j + 1]))
                if row == obj_row:
                    obj_coefs[col] = val
                else:
                    if row not in row_terms:
                        raise SolveError(f"MPS column references unknown row {row!r}")
                    if val.denominator != 1:
                        raise SolveError(f"non-integer coefficient {val} on row {row!r}")
                    row_terms[row].append((col, int(val)))
        elif section == "RHS":
            for j in range(1, len(parts) - 1, 2):
                row, val = parts[j], Fraction(Decimal(parts[j + 1]))
                if row == obj_row:
                    model.objective_const = -val
                    continue
                if val.denominator != 1:
                    raise SolveError(f"non-integer rhs {val} on row {row!r}")
                row_rhs[row] = int(val)
        elif section == "RANGES":
            for j in range(1, len(parts) - 1, 2):
                row, val = parts[j], Fraction(Decimal(parts[j + 1]))
                if val.denominator != 1:
                    raise SolveError(f"non-integer range {val} on row {row!r}")
                row_range[row] = int(val)
        elif section == "BOUNDS":
            kind, col = parts[0].upper(), parts[2]
            get_var(col)
            if kind in ("UP", "UI"):
                bounds[col][1] = int(Decimal(parts[3]))
            elif kind in ("LO", "LI"):
                bounds[col][0] = int(Decimal(parts[3]))
            elif kind == "FX":
                bounds[col][0] = bounds[col][1] = int(Decimal(parts[3]))
            elif kind == "BV":
                bounds[col] = [0, 1]
            else:
                raise SolveError(f"unsupported bound type {kind!r}")

    for name in sorted(var_idx, key=var_idx.get):
        lb, ub = bounds[name]
        model.add_var(name, lb, ub, binary=(lb == 0 and ub == 1))
    for row in order:
        terms = [(model.var_index(c), v) for c, v in row_terms[row]]
        rhs = row_rhs.get(row, 0)
        sense = row_sense[row]
        model.add_constr(row, terms, sense, rhs)
        if row in row_range:
            r = row_range[row]
            if sense == GE:
                model.add_constr(row + ".rng", terms, LE, rhs + abs(r))
            elif sense == LE:
                model.add_constr(row + ".rng", terms, GE, rhs - abs(r))
            else:
                lo, hi = (rhs, rhs + r) if r >= 0 else (rhs + r, rhs)
                model.add_constr(row + ".rng.lo", terms, GE, lo)
                model.add_constr(row + ".rng.hi", terms, LE, hi)
    model.objective = {model.var_index(c): v for c, v in obj_coefs.items()}
    return model
