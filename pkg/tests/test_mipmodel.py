"""Model container: boolean gadgets (exhaustive truth tables), guards, checks."""

from fractions import Fraction
from itertools import product

import pytest

from cimopt.errors import ModelBuildError
from cimopt.mipmodel import EQ, GE, LE, MipModel


def truth_assignments(model, free):
    """All 0/1 assignments over `free` vars; other vars must be absent."""
    for combo in product((0, 1), repeat=len(free)):
        yield dict(zip(free, combo))


def feasible_outputs(model, in_vars, out_var, in_values):
    outs = []
    for out_val in (0, 1):
        values = [0] * len(model.vars)
        for v, val in zip(in_vars, in_values):
            values[v] = val
        values[out_var] = out_val
        if not model.check_assignment(values):
            outs.append(out_val)
    return outs


@pytest.mark.parametrize("arity", [1, 2, 3, 4])
def test_and_gadget_truth_table(arity):
    model = MipModel()
    ins = [model.add_binary(f"i{k}") for k in range(arity)]
    out = model.add_binary("out")
    model.add_and("and", out, ins)
    for combo in product((0, 1), repeat=arity):
        expect = int(all(combo))
        assert feasible_outputs(model, ins, out, combo) == [expect]


@pytest.mark.parametrize("arity", [1, 2, 3, 4])
def test_or_gadget_truth_table(arity):
    model = MipModel()
    ins = [model.add_binary(f"i{k}") for k in range(arity)]
    out = model.add_binary("out")
    model.add_or("or", out, ins)
    for combo in product((0, 1), repeat=arity):
        expect = int(any(combo))
        assert feasible_outputs(model, ins, out, combo) == [expect]


def test_sum_eq_gadget():
    model = MipModel()
    ins = [model.add_binary(f"i{k}") for k in range(3)]
    out = model.add_binary("out")
    model.add_sum_eq("sum", out, ins)
    for combo in product((0, 1), repeat=3):
        expect = [sum(combo)] if sum(combo) <= 1 else []
        assert feasible_outputs(model, ins, out, combo) == expect


def test_guarded_row_truth_table():
    """b=1 => x >= 3 over every (b, x) combination."""
    model = MipModel()
    b = model.add_binary("b")
    x = model.add_int("x", 0, 5)
    model.add_constr("g", [(x, 1)], GE, 3, conds=[(b, 1)])
    for bval in (0, 1):
        for xval in range(6):
            values = [bval, xval]
            ok = not model.check_assignment(values)
            assert ok == (bval == 0 or xval >= 3)


def test_multi_guard_row():
    model = MipModel()
    a = model.add_binary("a")
    b = model.add_binary("b")
    x = model.add_int("x", 0, 5)
    model.add_constr("g", [(x, 1)], GE, 4, conds=[(a, 1), (b, 0)])
    for av, bv, xv in product((0, 1), (0, 1), range(6)):
        ok = not model.check_assignment([av, bv, xv])
        assert ok == (not (av == 1 and bv == 0) or xv >= 4)


def test_max_lb_gadget_minimum_is_max():
    model = MipModel()
    x = model.add_int("x", 0, 10)
    y = model.add_int("y", 0, 10)
    z = model.add_int("z", 0, 100)
    model.add_max_lb("mx", z, [([(x, 1)], 0), ([(y, 1)], 0)])
    for xv, yv in product(range(0, 10, 3), repeat=2):
        feas = [zv for zv in range(0, 20)
                if not model.check_assignment([xv, yv, zv])]
        assert min(feas) == max(xv, yv)


def test_exactly_one_group():
    model = MipModel()
    vs = [model.add_binary(f"v{k}") for k in range(3)]
    model.add_exactly_one("g", vs)
    for combo in product((0, 1), repeat=3):
        ok = not model.check_assignment(list(combo))
        assert ok == (sum(combo) == 1)
    with pytest.raises(ModelBuildError):
        model.add_exactly_one("g2", [vs[0]])


def test_objective_and_clone_isolation():
    model = MipModel()
    x = model.add_int("x", 0, 5)
    model.set_objective({x: Fraction(3, 2)})
    assert model.eval_objective([4]) == 6
    clone = model.clone()
    clone.add_constr("c", [(x, 1)], LE, 2)
    assert len(clone.constraints) == 1
    assert len(model.constraints) == 0


def test_duplicate_and_merged_terms():
    model = MipModel()
    x = model.add_int("x", 0, 5)
    idx = model.add_constr("c", [(x, 1), (x, 2)], EQ, 6)
    assert model.constraints[idx].terms == ((x, 3),)
    with pytest.raises(ModelBuildError):
        model.add_var("x", 0, 1, binary=True)
