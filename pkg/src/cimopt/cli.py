"""Batch front-end: workload + architecture in, mapping reports out.

`optimize` runs factorization, candidate enumeration, model build, solve
and evaluation per layer, with optional baseline runs and speedup columns;
`compare` diffs two reports; `solve-mps` solves an exported MPS file with
the builtin engine (which also makes the package usable as its own
external solver in round-trip tests).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import __version__
from .arch import load_arch
from .baselines import BaselineConfig, exhaustive_best, heuristic_search, ws_constrained
from .enumeration import build_candidate_table
from .errors import CimoptError
from .latency import evaluate
from .mapping import decode_solution
from .mipbuild import ObjectiveWeights, build_model
from .mps import read_mps, write_solution_file
from .solve import SolveConfig, solve, solve_builtin
from .workload import (DIMS, FactorizationConfig, factorize_layer, load_workload)

REPORT_SCHEMA_VERSION = 1
MODES = ("miredo", "ws", "exhaustive", "heuristic")


def _layer_key(layer):
    return tuple([layer.dims[d] for d in DIMS]
                 + [layer.stride_y, layer.stride_x,
                    layer.w_bits, layer.a_bits, layer.o_bits])


def _result_entry(status, mapping=None, report=None, objective=None,
                  extra=None, trace=False) -> dict:
    entry = {"status": status}
    if objective is not None:
        entry["objective"] = str(objective)
    if report is not None:
        entry["latency_cycles"] = report.total_latency
        entry["p0"] = dict(report.p0)
        entry["energy_pj"] = report.energy_pj
        entry["edp_js"] = report.edp_js
        if trace:
            entry["slot_trace"] = report.slot_trace
    if mapping is not None:
        entry["mapping"] = mapping.to_json_dict()
    if extra:
        entry.update(extra)
    return entry


def process_layer(layer, arch, opts) -> dict:
    """Run the requested mode plus baselines for one layer."""
    t0 = time.monotonic()
    fcfg = FactorizationConfig()
    factors = factorize_layer(layer, fcfg)
    table = build_candidate_table(layer, factors, arch)
    modes = [opts["mode"]] + [b for b in opts["baselines"] if b != opts["mode"]]
    # weight-stationary runs first so its incumbent can warm-start the optimizer
    order = sorted(set(modes), key=lambda m: (m != "ws", MODES.index(m)))

    solve_cfg = SolveConfig(backend=opts["solver"],
                            time_limit_s=opts["time_limit"],
                            external_command=opts.get("solver_cmd"))
    results = {}
    timings = {}
    model = ctx = None
    ws_values = None

    def run_mip(mip_model, warm=None, tag=""):
        if opts["solver"] == "external":
            res = solve(mip_model, solve_cfg)
        else:
            res = solve_builtin(mip_model, solve_cfg, warm_values=warm)
        if opts.get("dump_mps"):
            from .mps import export_mps, write_mangle_table
            text, mangle = export_mps(mip_model)
            base = os.path.join(opts["dump_mps"], f"{layer.name}{tag}.mps")
            with open(base, "w", encoding="utf-8") as fh:
                fh.write(text)
            write_mangle_table(mangle, base + ".names.json")
        return res

    for mode in order:
        t_mode = time.monotonic()
        if mode in ("miredo", "ws") and model is None:
            model, ctx = build_model(layer, factors, arch, table,
                                     ObjectiveWeights())
        if mode == "exhaustive":
            sr = exhaustive_best(factors, arch, table, cap=opts["exhaustive_cap"])
            results[mode] = _result_entry(
                "optimal", sr.mapping, sr.report, trace=opts.get("trace", False),
                extra={"space_size_bound": sr.space_size, "evaluated": sr.evaluated})
        elif mode == "heuristic":
            bcfg = BaselineConfig(mode="heuristic",
                                  heuristic_samples=opts["heuristic_samples"],
                                  seed=opts["seed"])
            sr = heuristic_search(factors, arch, table, bcfg)
            results[mode] = _result_entry("feasible", sr.mapping, sr.report,
                                          trace=opts.get("trace", False),
                                          extra={"evaluated": sr.evaluated})
        elif mode == "ws":
            from .baselines import ws_strict_capacity_ok
            can_reload = len(ctx.adm_levels["W"]) > 1
            reload_used = False
            if can_reload and not ws_strict_capacity_ok(ctx):
                # weights cannot stay macro-resident; go straight to the
                # reload-round formulation
                ws_model = ws_constrained(model, ctx, allow_reload=True)
                res = run_mip(ws_model, tag=".ws_reload")
                reload_used = True
            else:
                ws_model = ws_constrained(model, ctx)
                res = run_mip(ws_model, tag=".ws")
                if can_reload and res.status in ("infeasible", "timeout"):
                    ws_model = ws_constrained(model, ctx, allow_reload=True)
                    res = run_mip(ws_model, tag=".ws_reload")
                    reload_used = True
            results[mode] = _solved_entry(res, ws_model, ctx, factors, arch, table,
                                          trace=opts.get("trace", False),
                                          extra={"weight_reload_rounds": reload_used})
            if res.has_solution:
                ws_values = res.values
        else:  # miredo
            res = run_mip(model, warm=ws_values, tag="")
            results[mode] = _solved_entry(res, model, ctx, factors, arch, table,
                                          trace=opts.get("trace", False))
        timings[mode] = time.monotonic() - t_mode

    chosen = results[opts["mode"]]
    speedup = {}
    for b in opts["baselines"]:
        if b == opts["mode"]:
            continue
        base_lat = results[b].get("latency_cycles")
        lat = chosen.get("latency_cycles")
        speedup[b] = (base_lat / lat) if base_lat and lat else None
    out = {
        "name": layer.name,
        "shape": layer.to_json_dict(),
        "factors": {d: list(factors.factors[d]) for d in DIMS if factors.factors[d]},
        "mode": opts["mode"],
        "results": results,
        "speedup": speedup,
    }
    return out, {"layer_s": time.monotonic() - t0, "per_mode_s": timings}


def _solved_entry(res, model, ctx, factors, arch, table, extra=None,
                  trace=False) -> dict:
    extra = dict(extra or {})
    extra["solver"] = {"status": res.status, "nodes": res.nodes,
                       "bound": str(res.bound) if res.bound is not None else None,
                       "message": res.message}
    if not res.has_solution:
        return _result_entry(res.status, extra=extra)
    mapping = decode_solution(model, ctx, res.values)
    report = evaluate(mapping, factors, arch)
    predicted = mapping.predicted
    agree = (report.p0 == predicted["p0"]
             and report.total_latency == predicted["lmax"])
    if not agree:
        extra["consistency_error"] = {
            "solver_p0": predicted["p0"], "evaluator_p0": report.p0,
            "solver_lmax": predicted["lmax"], "evaluator_total": report.total_latency,
        }
        return _result_entry("error", mapping, report, res.objective, extra, trace)
    return _result_entry(res.status, mapping, report, res.objective, extra, trace)


def _aggregate(layers, arch, mode, baselines) -> dict:
    total_lat = 0
    total_energy = 0.0
    energy_ok = True
    base_lat = {b: 0 for b in baselines}
    for entry in layers:
        chosen = entry["results"].get(mode, {})
        total_lat += chosen.get("latency_cycles") or 0
        e = chosen.get("energy_pj")
        if e is None:
            energy_ok = False
        else:
            total_energy += e
        for b in baselines:
            if b in entry["results"]:
                base_lat[b] += entry["results"][b].get("latency_cycles") or 0
    seconds = total_lat * arch.clock_ns * 1e-9
    agg = {
        "total_latency_cycles": total_lat,
        "total_energy_pj": total_energy if energy_ok else None,
        "edp_js": (total_energy * 1e-12 * seconds) if energy_ok else None,
        "speedup_vs": {b: (base_lat[b] / total_lat) if total_lat and base_lat[b] else None
                       for b in baselines if b != mode},
    }
    return agg


def _write_csv(path, layers, mode, baselines):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["layer", "mode", "status", "latency_cycles", "energy_pj", "edp_js"]
        for b in baselines:
            if b != mode:
                header += [f"{b}_latency_cycles", f"speedup_vs_{b}"]
        writer.writerow(header)
        for entry in layers:
            chosen = entry["results"][mode]
            row = [entry["name"], mode, chosen["status"],
                   chosen.get("latency_cycles"), chosen.get("energy_pj"),
                   chosen.get("edp_js")]
            for b in baselines:
                if b != mode:
                    row += [entry["results"].get(b, {}).get("latency_cycles"),
                            entry["speedup"].get(b)]
            writer.writerow(row)


def _process_layer_star(args):
    return process_layer(*args)


def run_optimize(args) -> int:
    opts = {
        "mode": args.mode,
        "baselines": [b for b in (args.baseline.split(",") if args.baseline else [])
                      if b],
        "solver": args.solver,
        "solver_cmd": args.solver_cmd or os.environ.get("MIREDO_SOLVER_CMD"),
        "time_limit": args.time_limit,
        "seed": args.seed,
        "heuristic_samples": args.heuristic_samples,
        "exhaustive_cap": args.exhaustive_cap,
        "dump_mps": args.dump_mps,
        "trace": args.trace,
    }
    for b in opts["baselines"]:
        if b not in MODES:
            print(f"error: unknown baseline mode {b!r}", file=sys.stderr)
            return 1
    if opts["solver"] == "external" and not opts["solver_cmd"]:
        print("error: external solver selected but no --solver-cmd or "
              "MIREDO_SOLVER_CMD given", file=sys.stderr)
        return 1
    if args.dump_mps:
        os.makedirs(args.dump_mps, exist_ok=True)

    try:
        arch = load_arch(args.arch)
        layers = load_workload(args.workload)
    except CimoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    t0 = time.time()
    cache = {}
    jobs = []
    for layer in layers:
        key = _layer_key(layer)
        if key not in cache:
            cache[key] = None
            jobs.append(layer)
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                done = list(pool.map(_process_layer_star,
                                     [(layer, arch, opts) for layer in jobs]))
        else:
            done = [process_layer(layer, arch, opts) for layer in jobs]
    except CimoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for layer, (entry, timing) in zip(jobs, done):
        cache[_layer_key(layer)] = (entry, timing)

    layer_entries = []
    layer_times = {}
    for layer in layers:
        entry, timing = cache[_layer_key(layer)]
        entry = dict(entry)
        entry["name"] = layer.name
        layer_entries.append(entry)
        layer_times[layer.name] = timing

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "workload": os.path.basename(args.workload),
        "arch": os.path.basename(args.arch),
        "mode": args.mode,
        "baselines": opts["baselines"],
        "seed": args.seed,
        "layers": layer_entries,
        "aggregate": _aggregate(layer_entries, arch, args.mode, opts["baselines"]),
        "meta": {
            "tool_version": __version__,
            "created_unix": t0,
            "wall_s": time.time() - t0,
            "layer_times": layer_times,
        },
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.csv:
        _write_csv(args.csv, layer_entries, args.mode, opts["baselines"])
    if args.trace:
        for entry in layer_entries:
            chosen = entry["results"].get(args.mode, {})
            print(f"# {entry['name']}")
            print("slot,dim,count,critical_path,"
                  + ",".join(f"{op}_latency,{op}_transfer" for op in ("I", "W", "O")))
            for step in chosen.get("slot_trace") or []:
                cells = [step["slot"], step["dim"], step["count"],
                         step["critical_path"]]
                for op in ("I", "W", "O"):
                    cells += [step[op]["latency"], step[op]["transfer_cycles"]]
                print(",".join(str(x) for x in cells))

    statuses = [e["results"][args.mode]["status"] for e in layer_entries]
    if any(s in ("error", "timeout", "infeasible") for s in statuses):
        return 1
    if any(s == "feasible" and args.mode in ("miredo", "ws") for s in statuses):
        return 2
    return 0


def run_compare(args) -> int:
    try:
        with open(args.report_a, "r", encoding="utf-8") as fh:
            rep_a = json.load(fh)
        with open(args.report_b, "r", encoding="utf-8") as fh:
            rep_b = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    names_a = [l["name"] for l in rep_a["layers"]]
    names_b = [l["name"] for l in rep_b["layers"]]
    if names_a != names_b:
        diff = next((a for a, b in zip(names_a, names_b) if a != b),
                    names_a[len(names_b):] or names_b[len(names_a):])
        print(f"error: workloads differ; first differing layer: {diff}",
              file=sys.stderr)
        return 1
    mode_a, mode_b = rep_a["mode"], rep_b["mode"]
    ratios = []
    print(f"{'layer':<24} {'lat_a':>12} {'lat_b':>12} {'latency_ratio':>14} {'edp_ratio':>12}")
    for la, lb in zip(rep_a["layers"], rep_b["layers"]):
        ra = la["results"][mode_a]
        rb = lb["results"][mode_b]
        lat_a, lat_b = ra.get("latency_cycles"), rb.get("latency_cycles")
        edp_a, edp_b = ra.get("edp_js"), rb.get("edp_js")
        lr = lat_a / lat_b if lat_a and lat_b else None
        er = edp_a / edp_b if edp_a and edp_b else None
        if lr:
            ratios.append(lr)
        print(f"{la['name']:<24} {lat_a or '-':>12} {lat_b or '-':>12} "
              f"{f'{lr:.4f}' if lr else '-':>14} {f'{er:.4f}' if er else '-':>12}")
    if ratios:
        geo = math.exp(sum(math.log(r) for r in ratios) / len(ratios))
        print(f"geomean latency ratio: {geo:.4f}")
    return 0


def run_solve_mps(args) -> int:
    try:
        with open(args.mps, "r", encoding="utf-8") as fh:
            model = read_mps(fh.read())
        cfg = SolveConfig(backend="builtin", time_limit_s=args.time_limit)
        res = solve_builtin(model, cfg)
        names = [v.name for v in model.vars]
        write_solution_file(args.sol, names, res.values, res.status,
                            objective=None if res.objective is None
                            else float(res.objective))
    except CimoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if res.status in ("optimal", "feasible") else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimopt",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="map a workload onto an architecture")
    opt.add_argument("--arch", required=True)
    opt.add_argument("--workload", required=True)
    opt.add_argument("--mode", choices=MODES, default="miredo")
    opt.add_argument("--baseline", default="",
                     help="comma-separated baseline modes to run for comparison")
    opt.add_argument("--solver", choices=("builtin", "external"), default="builtin")
    opt.add_argument("--solver-cmd", default=None,
                     help="external command template with {mps} and {sol}")
    opt.add_argument("--time-limit", type=int, default=300)
    opt.add_argument("--jobs", type=int, default=1)
    opt.add_argument("--seed", type=int, default=0)
    opt.add_argument("--heuristic-samples", type=int, default=200)
    opt.add_argument("--exhaustive-cap", type=int, default=10 ** 6)
    opt.add_argument("--out", default="report.json")
    opt.add_argument("--csv", default=None)
    opt.add_argument("--trace", action="store_true")
    opt.add_argument("--dump-mps", default=None)
    opt.set_defaults(func=run_optimize)

    cmp_p = sub.add_parser("compare", help="compare two report files")
    cmp_p.add_argument("report_a")
    cmp_p.add_argument("report_b")
    cmp_p.set_defaults(func=run_compare)

    smps = sub.add_parser("solve-mps", help="solve an MPS file with the builtin engine")
    smps.add_argument("mps")
    smps.add_argument("sol")
    smps.add_argument("--time-limit", type=int, default=300)
    smps.set_defaults(func=run_solve_mps)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # exit code 2 is reserved for solved-with-incumbent runs; usage
        # problems report as plain errors
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except CimoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
