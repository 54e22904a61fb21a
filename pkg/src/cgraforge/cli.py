"""Command line interface.

Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
3 domain failure (no feasible design, unmappable design, or structural
violations). With --json every command prints exactly one JSON document to
stdout and nothing else there; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .arch import ArchError, DesignPoint, parse_design, validate_design
from .costs import EvalError, Objective, ObjectiveMode, load_cost_coeffs, tool_evaluate
from .kernel import BUILTIN_KERNELS, KernelError, TransformError, apply_sw_params, load_kernel, summarize
from .mapper import MapBudget, MapError, MappedDesign, map_kernel
from .mapper import speedup as compute_speedup
from .orchestrate import RunConfig, RunConfigError, run
from .selection import SelectionConfigError, load_sim_script, run_selection, trace_to_jsonl

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3

_BUNDLED_SCRIPTS = ("constant_agreement", "interval_forcing")


class CliError(Exception):
    """Fatal CLI failure carrying its exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {e}") from None


def _load_design(path: str) -> DesignPoint:
    try:
        return parse_design(_read_text(path))
    except ArchError as e:
        raise CliError(EXIT_USAGE, f"{path}: {e}") from None


def _load_kernel(name: str):
    try:
        return load_kernel(name)
    except KernelError as e:
        raise CliError(EXIT_USAGE, f"kernel {name!r}: {e}") from None


def _parse_objective(mode: str, min_speedup: float) -> Objective:
    try:
        return Objective(mode=ObjectiveMode.parse(mode), min_speedup=min_speedup)
    except EvalError as e:
        raise CliError(EXIT_USAGE, str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgraforge", description="Closed-loop CGRA hardware/software co-design.")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full co-design loop")
    run_p.add_argument("--config", help="run config JSON file")
    run_p.add_argument("--kernel", help="built-in kernel name or kernel JSON path")
    run_p.add_argument("--objective", help="MIN_POWER or MAX_POWER_EFFICIENCY")
    run_p.add_argument("--min-speedup", type=float, help="feasibility floor on speedup")
    run_p.add_argument("--iterations", type=int, help="total iterations to run")
    run_p.add_argument("--seed", type=int, help="run seed")
    run_p.add_argument("--out", help="output directory (default runs/<kernel>-<objective>-s<seed>)")
    run_p.add_argument("--resume", action="store_true", help="extend the run already in the output directory")
    run_p.add_argument("--json", action="store_true", help="print the metrics document to stdout")
    run_p.add_argument("--verbose", action="store_true", help="log progress to stderr")

    val_p = sub.add_parser("validate", help="structurally validate a design file")
    val_p.add_argument("design", help="architecture JSON file")
    val_p.add_argument("--json", action="store_true")

    map_p = sub.add_parser("map", help="map a design file onto a kernel")
    map_p.add_argument("design", help="architecture JSON file")
    map_p.add_argument("--kernel", required=True, help="built-in kernel name or kernel JSON path")
    map_p.add_argument("--max-ii", type=int, default=32)
    map_p.add_argument("--attempts", type=int, default=50_000, help="placement attempt budget per II")
    map_p.add_argument("--json", action="store_true")

    ev_p = sub.add_parser("evaluate", help="map a design and report speedup, power, area, and score")
    ev_p.add_argument("design", help="architecture JSON file")
    ev_p.add_argument("--kernel", required=True)
    ev_p.add_argument("--objective", default="MIN_POWER")
    ev_p.add_argument("--min-speedup", type=float, default=1.5)
    ev_p.add_argument("--coeffs", help="cost coefficients JSON (default: packaged)")
    ev_p.add_argument("--json", action="store_true")

    sim_p = sub.add_parser("select-sim", help="drive the selection controller over scripted scores")
    sim_p.add_argument("script", help=f"script JSON file, or a bundled name: {', '.join(_BUNDLED_SCRIPTS)}")
    sim_p.add_argument("--json", action="store_true")

    rep_p = sub.add_parser("report", help="summarize a finished run directory")
    rep_p.add_argument("run_dir", help="directory holding metrics.json")
    rep_p.add_argument("--json", action="store_true")

    ker_p = sub.add_parser("kernels", help="list the built-in kernels")
    ker_p.add_argument("--json", action="store_true")

    return p


# ----- command handlers ------------------------------------------------------


def _cmd_run(args) -> int:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(_read_text(args.config))
        except json.JSONDecodeError as e:
            raise CliError(EXIT_USAGE, f"{args.config}: invalid JSON: {e}") from None
        if not isinstance(data, dict):
            raise CliError(EXIT_USAGE, f"{args.config}: run config must be a JSON object")
    if args.kernel:
        data["kernel"] = args.kernel
    if args.iterations is not None:
        data["iterations"] = args.iterations
    if args.seed is not None:
        data["seed"] = args.seed
    if args.objective or args.min_speedup is not None:
        obj = dict(data.get("objective", {}))
        if args.objective:
            obj["mode"] = args.objective
        if args.min_speedup is not None:
            obj["min_speedup"] = args.min_speedup
        data["objective"] = obj
    if "kernel" not in data:
        raise CliError(EXIT_USAGE, "a kernel is required (--kernel or config file)")

    try:
        cfg = RunConfig.from_json(data)
    except (RunConfigError, EvalError) as e:
        raise CliError(EXIT_USAGE, str(e)) from None

    out = args.out
    if out is None:
        out = str(Path("runs") / f"{Path(cfg.kernel).stem}-{cfg.objective.mode.name.lower()}-s{cfg.seed}")

    if args.verbose:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    try:
        result = run(cfg, out, resume=args.resume)
    except (RunConfigError, KernelError, EvalError, ArchError) as e:
        raise CliError(EXIT_USAGE, str(e)) from None

    m = result.metrics
    if args.json:
        _print_json(m)
    else:
        print(f"run: kernel={m['kernel']} objective={m['objective']['mode']} seed={m['seed']}")
        print(f"iterations={m['iterations_run']} sr1={m['sr1']:.3f} sr2={m['sr2']:.3f}")
        print(f"tool_rounds={m['tool_rounds']} llm_rounds={m['llm_rounds']} final_confidence={m['final_confidence']:.4f}")
        if m["feasible"]:
            b = m["best"]
            print(
                f"best: {b['design_id']} (iteration {b['iteration']}) score={b['score']:.6g} "
                f"speedup={b['speedup']:.3f} power={b['power_mw']:.4f}mW area={b['area_kum2']:.2f}kum2"
            )
            print(f"artifacts: {result.history_path} {result.metrics_path} {result.best_design_path}")
        else:
            print("no feasible design found", file=sys.stderr)
    return EXIT_OK if m["feasible"] else EXIT_DOMAIN


def _cmd_validate(args) -> int:
    d = _load_design(args.design)
    violations = validate_design(d)
    if args.json:
        _print_json(
            {
                "ok": not violations,
                "design_id": d.id,
                "violations": [{"code": v.code, "field": v.field, "message": v.message} for v in violations],
            }
        )
    elif violations:
        for v in violations:
            print(f"{v.code} ({v.field}): {v.message}")
    else:
        print(f"OK {d.id}")
    return EXIT_OK if not violations else EXIT_DOMAIN


def _map_design(design_path: str, kernel_name: str, max_ii: int, attempts: int):
    """Shared validate + transform + map pipeline for map/evaluate; raises
    CliError or returns (design, transformed kernel, mapping)."""
    if max_ii < 1 or attempts < 1:
        raise CliError(EXIT_USAGE, "--max-ii and --attempts must be >= 1")
    d = _load_design(design_path)
    violations = validate_design(d)
    if violations:
        raise CliError(
            EXIT_DOMAIN,
            "design is structurally invalid: " + "; ".join(f"{v.code}({v.field})" for v in violations),
        )
    k = _load_kernel(kernel_name)
    try:
        tk = apply_sw_params(k, d.sw.unroll_factor, d.sw.vectorize_factor)
    except TransformError as e:
        raise CliError(EXIT_DOMAIN, f"transform failed: {e.code}: {e}") from None
    res = map_kernel(tk, d.fabric, MapBudget(max_ii=max_ii, placement_attempts=attempts))
    if isinstance(res, MapError):
        hint = f" hint={json.dumps(res.hint, sort_keys=True)}" if res.hint else ""
        raise CliError(EXIT_DOMAIN, f"mapping failed: {res.code}: {res.detail}{hint}")
    return d, tk, res


def _cmd_map(args) -> int:
    try:
        _d, _tk, res = _map_design(args.design, args.kernel, args.max_ii, args.attempts)
    except CliError as e:
        if args.json and e.code == EXIT_DOMAIN:
            _print_json({"error": str(e)})
        raise
    doc = {
        "ii": res.ii,
        "schedule_len": res.schedule_len,
        "placements": {
            str(nid): {"tile": list(tile), "start": start} for nid, (tile, start) in sorted(res.schedule.items())
        },
        "routes": [[list(t) for t in path] for path in res.routes],
    }
    if args.json:
        _print_json(doc)
    else:
        print(f"ii={res.ii} schedule_len={res.schedule_len} nodes={len(res.schedule)}")
        for nid, (tile, start) in sorted(res.schedule.items()):
            print(f"  node {nid}: tile=({tile[0]},{tile[1]}) start={start} slot={start % res.ii}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    d, tk, res = _map_design(args.design, args.kernel, 32, 50_000)
    obj = _parse_objective(args.objective, args.min_speedup)
    try:
        coeffs = load_cost_coeffs(args.coeffs)
    except (EvalError, OSError) as e:
        raise CliError(EXIT_USAGE, f"cost coefficients: {e}") from None
    k = _load_kernel(args.kernel)
    sp = compute_speedup(k, res, tk.trip_count)
    cand = MappedDesign(design=d, mapping=res, trip_after=tk.trip_count, speedup=sp)
    report = tool_evaluate([cand], k, obj, coeffs)[0]
    doc = {
        "design_id": report.design_id,
        "ii": res.ii,
        "speedup": report.speedup,
        "power_mw": report.power_mw,
        "area_kum2": report.area_kum2,
        "power_efficiency": report.power_efficiency,
        "score": report.score,
        "feasible": report.feasible,
    }
    if args.json:
        _print_json(doc)
    else:
        print(
            f"{report.design_id}: ii={res.ii} speedup={report.speedup:.3f} power={report.power_mw:.4f}mW "
            f"area={report.area_kum2:.2f}kum2 efficiency={report.power_efficiency:.4f} "
            f"score={report.score:.6g} feasible={report.feasible}"
        )
    return EXIT_OK


def _cmd_select_sim(args) -> int:
    if Path(args.script).exists():
        text = _read_text(args.script)
    elif args.script in _BUNDLED_SCRIPTS:
        text = resources.files("cgraforge.data.scripts").joinpath(f"{args.script}.json").read_text("utf-8")
    else:
        raise CliError(EXIT_USAGE, f"no such script file or bundled script: {args.script}")
    try:
        cfg, steps = load_sim_script(json.loads(text))
    except json.JSONDecodeError as e:
        raise CliError(EXIT_USAGE, f"script is not valid JSON: {e}") from None
    except SelectionConfigError as e:
        raise CliError(EXIT_USAGE, str(e)) from None
    trace = run_selection(cfg, steps)
    if args.json:
        _print_json({"trace": [r.to_dict() for r in trace]})
    else:
        sys.stdout.write(trace_to_jsonl(trace))
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.run_dir) / "metrics.json"
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise CliError(EXIT_USAGE, f"{path}: invalid JSON: {e}") from None
    if args.json:
        _print_json(m)
        return EXIT_OK
    print(f"kernel={m['kernel']} objective={m['objective']['mode']} seed={m['seed']} iterations={m['iterations_run']}")
    print(f"sr1={m['sr1']:.3f} sr2={m['sr2']:.3f} tool_rounds={m['tool_rounds']} llm_rounds={m['llm_rounds']}")
    if m.get("feasible") and m.get("best"):
        b = m["best"]
        print(f"best: {b['design_id']} score={b['score']:.6g} speedup={b['speedup']:.3f} power={b['power_mw']:.4f}mW")
    else:
        print("no feasible design")
    for entry in m.get("iterations", []):
        best = "-" if entry["best_so_far"] is None else f"{entry['best_so_far']:.6g}"
        print(
            f"  it {entry['iteration']:>3}: mapped {entry['mapped_pre']}/{entry['proposals']} "
            f"(+repair {entry['mapped_post'] - entry['mapped_pre']}) mode={entry['mode'] or '-'} best={best}"
        )
    return EXIT_OK


def _cmd_kernels(args) -> int:
    rows = []
    for name in BUILTIN_KERNELS:
        s = summarize(load_kernel(name))
        rows.append(
            {
                "name": s.name,
                "nodes": s.node_count,
                "trip_count": s.trip_count,
                "carried_edges": s.carried_edge_count,
                "total_latency": s.total_latency,
                "op_census": s.op_census,
            }
        )
    if args.json:
        _print_json(rows)
    else:
        for r in rows:
            census = ",".join(f"{k}x{v}" for k, v in r["op_census"].items())
            print(
                f"{r['name']:<14} nodes={r['nodes']:<3} trip={r['trip_count']:<6} "
                f"carried={r['carried_edges']} latency={r['total_latency']:<3} ops={census}"
            )
    return EXIT_OK


_HANDLERS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "map": _cmd_map,
    "evaluate": _cmd_evaluate,
    "select-sim": _cmd_select_sim,
    "report": _cmd_report,
    "kernels": _cmd_kernels,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # noqa: BLE001 - last-resort guard for exit code 1
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
