"""Command-line front end: runs, reports, exit codes, comparisons."""

import json
import os
import sys

import pytest

from cimopt.cli import main

from conftest import make_arch


@pytest.fixture
def io_files(tmp_path):
    arch = make_arch([("dram", 10 ** 9, 8, False), ("buf", 512, 16, True)],
                     axes=(("pe", 2, ["K"], 0),))
    arch_path = tmp_path / "arch.json"
    arch_path.write_text(json.dumps(arch.to_json_dict()))
    workload = {"layers": [
        {"name": "a", "B": 1, "K": 4, "C": 2, "OY": 1, "OX": 1, "FY": 1,
         "FX": 1, "stride_y": 1, "stride_x": 1, "w_bits": 8, "a_bits": 8,
         "o_bits": 8},
        {"name": "b", "B": 1, "K": 6, "C": 1, "OY": 1, "OX": 1, "FY": 1,
         "FX": 1, "stride_y": 1, "stride_x": 1, "w_bits": 8, "a_bits": 8,
         "o_bits": 8},
    ]}
    wl_path = tmp_path / "workload.json"
    wl_path.write_text(json.dumps(workload))
    return tmp_path, str(arch_path), str(wl_path)


def run_cli(*argv):
    return main(list(argv))


class TestOptimize:
    def test_full_run_with_baseline(self, io_files):
        tmp, arch, wl = io_files
        out = str(tmp / "report.json")
        csv_out = str(tmp / "report.csv")
        code = run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", "miredo", "--baseline", "ws,exhaustive",
                       "--time-limit", "120", "--out", out, "--csv", csv_out)
        assert code == 0
        report = json.loads(open(out).read())
        assert report["schema_version"] == 1
        assert [l["name"] for l in report["layers"]] == ["a", "b"]
        for entry in report["layers"]:
            chosen = entry["results"]["miredo"]
            assert chosen["status"] == "optimal"
            # optimizer never loses to its own constrained baseline
            assert entry["speedup"]["ws"] >= 1.0
            assert entry["results"]["exhaustive"]["latency_cycles"] \
                <= entry["results"]["ws"]["latency_cycles"]
        agg = report["aggregate"]
        assert agg["total_latency_cycles"] > 0
        assert agg["speedup_vs"]["ws"] >= 1.0
        lines = open(csv_out).read().splitlines()
        assert lines[0].startswith("layer,")
        assert len(lines) == 3

    def test_exhaustive_mode(self, io_files):
        tmp, arch, wl = io_files
        out = str(tmp / "r.json")
        code = run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", "exhaustive", "--out", out)
        assert code == 0
        report = json.loads(open(out).read())
        assert all(l["results"]["exhaustive"]["status"] == "optimal"
                   for l in report["layers"])

    def test_missing_arch_flag_is_usage_error(self, io_files, capsys):
        tmp, arch, wl = io_files
        code = run_cli("optimize", "--workload", wl)
        assert code == 1

    def test_unreadable_arch_is_clean_error(self, io_files, capsys):
        tmp, arch, wl = io_files
        code = run_cli("optimize", "--arch", str(tmp / "nope.json"),
                       "--workload", wl)
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_schema_is_clean_error(self, io_files, tmp_path, capsys):
        tmp, arch, wl = io_files
        bad = tmp_path / "bad.json"
        bad.write_text("{\"layers\": [{\"name\": \"x\"}]}")
        code = run_cli("optimize", "--arch", arch, "--workload", str(bad))
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_reproducible_reports(self, io_files):
        tmp, arch, wl = io_files
        out1, out2 = str(tmp / "r1.json"), str(tmp / "r2.json")
        for out in (out1, out2):
            assert run_cli("optimize", "--arch", arch, "--workload", wl,
                           "--mode", "miredo", "--seed", "7",
                           "--out", out) == 0
        a = json.loads(open(out1).read())
        b = json.loads(open(out2).read())
        a.pop("meta")
        b.pop("meta")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_duplicate_shapes_share_results(self, io_files, tmp_path):
        tmp, arch, wl = io_files
        doc = json.loads(open(wl).read())
        doc["layers"].append(dict(doc["layers"][0], name="a_again"))
        wl2 = tmp_path / "wl2.json"
        wl2.write_text(json.dumps(doc))
        out = str(tmp / "r.json")
        assert run_cli("optimize", "--arch", arch, "--workload", str(wl2),
                       "--mode", "heuristic", "--seed", "1", "--out", out) == 0
        report = json.loads(open(out).read())
        lat = {l["name"]: l["results"]["heuristic"]["latency_cycles"]
               for l in report["layers"]}
        assert lat["a"] == lat["a_again"]

    def test_external_solver_round_trip(self, io_files):
        tmp, arch, wl = io_files
        out = str(tmp / "r.json")
        cmd = f"{sys.executable} -m cimopt.cli solve-mps {{mps}} {{sol}}"
        code = run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", "miredo", "--solver", "external",
                       "--solver-cmd", cmd, "--time-limit", "120",
                       "--out", out)
        assert code == 0
        report = json.loads(open(out).read())
        assert all(l["results"]["miredo"]["status"] == "optimal"
                   for l in report["layers"])

    def test_env_var_solver_cmd(self, io_files, monkeypatch):
        tmp, arch, wl = io_files
        out = str(tmp / "r.json")
        cmd = f"{sys.executable} -m cimopt.cli solve-mps {{mps}} {{sol}}"
        monkeypatch.setenv("MIREDO_SOLVER_CMD", cmd)
        code = run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", "miredo", "--solver", "external", "--out", out)
        assert code == 0

    def test_dump_mps_writes_files(self, io_files):
        tmp, arch, wl = io_files
        dump = str(tmp / "mps")
        out = str(tmp / "r.json")
        assert run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", "miredo", "--dump-mps", dump,
                       "--out", out) == 0
        files = os.listdir(dump)
        assert any(f.endswith(".mps") for f in files)
        assert any(f.endswith(".names.json") for f in files)


class TestCompare:
    def _make_report(self, io_files, mode, name):
        tmp, arch, wl = io_files
        out = str(tmp / name)
        assert run_cli("optimize", "--arch", arch, "--workload", wl,
                       "--mode", mode, "--baseline", "",
                       "--time-limit", "120", "--out", out) == 0
        return out

    def test_self_compare_all_ones(self, io_files, capsys):
        rep = self._make_report(io_files, "miredo", "a.json")
        assert run_cli("compare", rep, rep) == 0
        text = capsys.readouterr().out
        assert "geomean latency ratio: 1.0000" in text

    def test_ws_vs_miredo_ratio_at_least_one(self, io_files, capsys):
        fast = self._make_report(io_files, "miredo", "m.json")
        slow = self._make_report(io_files, "ws", "w.json")
        assert run_cli("compare", slow, fast) == 0
        out = capsys.readouterr().out
        geo = float(out.rsplit("geomean latency ratio:", 1)[1])
        assert geo >= 1.0

    def test_mismatched_workloads_error(self, io_files, tmp_path, capsys):
        rep = self._make_report(io_files, "miredo", "a.json")
        other = json.loads(open(rep).read())
        other["layers"] = other["layers"][:1]
        p = tmp_path / "other.json"
        p.write_text(json.dumps(other))
        assert run_cli("compare", rep, str(p)) == 1
        assert "differ" in capsys.readouterr().err


class TestSolveMps:
    def test_solve_mps_subcommand(self, tmp_path):
        from cimopt.mps import export_mps
        from cimopt.mipmodel import MipModel
        from fractions import Fraction
        model = MipModel("m")
        x = model.add_binary("x")
        y = model.add_binary("y")
        model.add_exactly_one("one", [x, y])
        model.set_objective({y: Fraction(2)})
        text, _ = export_mps(model)
        mps = tmp_path / "m.mps"
        mps.write_text(text)
        sol = tmp_path / "m.sol"
        assert run_cli("solve-mps", str(mps), str(sol)) == 0
        content = sol.read_text()
        assert "# status optimal" in content
        assert "X0000000 1" in content
