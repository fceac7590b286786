"""Shared instance builders for the test suite."""

import pytest

from cimopt.arch import arch_from_json_dict
from cimopt.workload import FactorSet, LayerShape


def make_arch(levels, axes=(), macro=None, clock_ns=1.0):
    """Compact architecture builder.

    levels: list of (name, capacity_bits, bus_width_bits, double_buffer)
            or dicts for full control; index 0 is off-chip.
    axes:   list of (name, size, dims, attach_level).
    """
    level_docs = []
    for idx, lv in enumerate(levels):
        if isinstance(lv, dict):
            doc = dict(lv)
            doc.setdefault("index", idx)
        else:
            name, cap, bw, db = lv
            doc = {"index": idx, "name": name, "capacity_bits": cap,
                   "bus_width_bits": bw, "operands": ["I", "W", "O"],
                   "double_buffer": db, "bypassable": idx != 0,
                   "read_energy_pj": 1.0, "write_energy_pj": 1.0}
        level_docs.append(doc)
    axis_docs = [{"name": n, "size": s, "dims": list(d), "attach_level": a}
                 for (n, s, d, a) in axes]
    return arch_from_json_dict({
        "levels": level_docs,
        "axes": axis_docs,
        "macro": macro or {"rows": 4, "cols": 4, "mvm_latency_cycles": 2,
                           "serial_bits": 8, "mvm_energy_pj": 1.0},
        "clock_ns": clock_ns,
    })


def make_layer(name="t", **bounds):
    dims = {"B": 1, "K": 1, "C": 1, "OY": 1, "OX": 1, "FY": 1, "FX": 1}
    strides = {"stride_y": bounds.pop("stride_y", 1),
               "stride_x": bounds.pop("stride_x", 1)}
    bits = {"w_bits": bounds.pop("w_bits", 8),
            "a_bits": bounds.pop("a_bits", 8),
            "o_bits": bounds.pop("o_bits", 8)}
    dims.update(bounds)
    return LayerShape(name=name, dims=dims, **strides, **bits)


@pytest.fixture
def arch2():
    return make_arch([("dram", 10 ** 9, 8, False), ("buf", 512, 16, True)],
                     axes=(("pe", 2, ["K"], 0),))


@pytest.fixture
def arch3():
    return make_arch([("dram", 10 ** 9, 8, False), ("gb", 256, 32, True),
                      ("lb", 128, 32, True)])


@pytest.fixture
def toy_layer():
    return make_layer("toy", K=4, C=2)


@pytest.fixture
def toy_factors():
    return FactorSet({"K": [2, 2], "C": [2]})
