"""Command line: ``tcpslice <simulate|solve|bounds|compare-fairness|twin>``.

Failures print one JSON line on stderr, ``{"error": <kind>, "message": ...}``,
and exit nonzero (2 for bad scenarios or arguments, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .netcalc import VARIANTS, UnboundedDelayError, bound_terms
from .numopt import (
    StepSizes,
    brute_force_primal,
    dual_descent_solve,
    dual_value,
    equal_split,
    primal_objective,
)
from .report import join_transients, json_safe, summarize
from .scenario import MODES, Scenario, ScenarioError, load_scenario, shipped, shipped_names
from .simengine import Simulation, TraceLog, available_backends

ORACLE_MAX_FLOWS = 3
# a bound within this fraction above its target counts as met; the price
# iteration only reaches active constraints to its rate tolerance
VERDICT_RTOL = 1e-3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1, **extra):
        super().__init__(message)
        self.kind = kind
        self.code = code
        self.extra = extra


# -- scenario handling --------------------------------------------------------

def resolve_scenario(arg: str) -> Path:
    """A filesystem path, or the bare name of a shipped scenario."""
    p = Path(arg)
    if p.exists() or arg not in shipped_names():
        return p
    return shipped(arg)


def scenario_from_args(args) -> Scenario:
    sc = load_scenario(resolve_scenario(args.scenario))
    sc = sc.with_overrides(
        seed=args.seed,
        bound_variant=args.bound_variant,
        mode=getattr(args, "mode", None),
        duration=args.duration,
    )
    if args.duration is not None and not args.duration > 0:
        raise CliError("bad_argument", "--duration must be positive", 2)
    return sc


def _bound(sc: Scenario, flows, f, rates, variant) -> float:
    p = sc.params
    try:
        return bound_terms(f, sc.network, flows, variant, p.l_max, p.cs_threshold).bound(rates)
    except UnboundedDelayError:
        return math.inf


def parse_rates(text: str, sc: Scenario) -> dict[str, float]:
    """``20e6,20e6`` (scenario flow order) or ``a=20e6,b=25e6``."""
    ids = [f.id for f in sc.flows]
    parts = [t.strip() for t in text.split(",") if t.strip()]
    out = {}
    try:
        if parts and all("=" in t for t in parts):
            for t in parts:
                k, v = t.split("=", 1)
                out[k.strip()] = float(v)
        else:
            if len(parts) != len(ids):
                raise CliError("bad_argument", f"--rates needs {len(ids)} values, got {len(parts)}", 2)
            out = dict(zip(ids, map(float, parts)))
    except ValueError:
        raise CliError("bad_argument", f"--rates: cannot parse {text!r}", 2) from None
    unknown = sorted(set(out) - set(ids))
    if unknown:
        raise CliError("bad_argument", f"--rates: unknown flow(s) {', '.join(unknown)}", 2)
    missing = [k for k in ids if k not in out]
    if missing:
        raise CliError("bad_argument", f"--rates: missing flow(s) {', '.join(missing)}", 2)
    return out


# -- output -------------------------------------------------------------------

def _out_dir(path: str) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io_error", f"cannot create {d}: {exc.strerror}", path=str(d)) from None
    return d


def _write(path: Path, write) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write(fh)
    except OSError as exc:
        raise CliError("io_error", f"cannot write {path}: {exc.strerror}", path=str(path)) from None


def write_trace(trace: TraceLog, out: Path, prefix: str = "") -> None:
    def table(columns, rows):
        def w(fh):
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            wr.writerows(rows)
        return w

    _write(out / f"{prefix}flows.csv", table(TraceLog.FLOW_COLUMNS, trace.flows))
    _write(out / f"{prefix}edges.csv", table(TraceLog.EDGE_COLUMNS, trace.edges))


def write_json(path: Path, obj) -> None:
    _write(path, lambda fh: fh.write(json.dumps(json_safe(obj), indent=2, sort_keys=False) + "\n"))


def _ms(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x * 1e3:.4f}"


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = scenario_from_args(args)
    out = _out_dir(args.out)
    sim = Simulation(sc, args.backend)
    trace = sim.run()
    write_trace(trace, out)
    summary = summarize(trace, sc, sim.kernel.backend, fluid=not args.no_fluid)
    write_json(out / "summary.json", summary)
    audit = summary["bound_audit"]
    print(f"{sc.name}: {len(trace.flows)} flow records, {len(trace.edges)} edge records; "
          f"bound audit {audit['violations']} violations in {audit['eligible_intervals']} eligible intervals")
    for ep in summary["epochs"]:
        rates = ", ".join(f"{k}={v / 1e6:.2f}" for k, v in ep["rates_bps"].items()) or "-"
        print(f"  [{ep['start_s']:g}, {ep['end_s']:g}) s  rates Mb/s: {rates}")
    return 0


def solve_report(sc: Scenario, oracle: bool = True) -> dict:
    p = sc.params
    flows = list(sc.flows)
    res = dual_descent_solve(sc.network, flows, StepSizes(p.gamma_e, p.gamma_j), p.bound_variant,
                             l_max=p.l_max, cs_threshold=p.cs_threshold)
    primal = primal_objective(flows, res.rates) if flows else 0.0
    dual = dual_value(res.prices, sc.network, flows, p.bound_variant, p.l_max, p.cs_threshold) if flows else 0.0
    report = {
        "variant": p.bound_variant,
        "converged": res.converged,
        "iterations": res.iterations,
        "rates_bps": res.rates,
        "edge_prices": res.prices.edge_prices,
        "source_prices": res.prices.source_prices,
        "bounds_s": {f.id: _bound(sc, flows, f, res.rates, p.bound_variant) for f in flows},
        "primal_objective": primal,
        "dual_value": dual,
        "duality_gap": abs(dual - primal) / abs(primal) if primal else abs(dual - primal),
        "oracle": None,
    }
    if oracle and 0 < len(flows) <= ORACLE_MAX_FLOWS:
        span = max(f.rate_max - f.rate_min for f in flows)
        step = max(1e4, span / (4000 if len(flows) <= 2 else 300))
        orc = brute_force_primal(sc.network, flows, p.bound_variant, step, p.l_max, p.cs_threshold)
        report["oracle"] = {"feasible": orc.feasible, "grid_step_bps": step, "rates_bps": orc.rates,
                            "objective": orc.objective}
    return report


def cmd_solve(args) -> int:
    sc = scenario_from_args(args)
    rep = solve_report(sc, not args.no_oracle)
    print(f"variant {rep['variant']}: converged={rep['converged']} after {rep['iterations']} sweeps")
    for f in sc.flows:
        line = (f"  {f.id}: rate {rep['rates_bps'][f.id] / 1e6:.3f} Mb/s  bound {_ms(rep['bounds_s'][f.id])} ms"
                f"  p_s {rep['source_prices'].get(f.id, 0.0):.6g}")
        if rep["oracle"] and rep["oracle"]["feasible"]:
            line += f"  oracle {rep['oracle']['rates_bps'][f.id] / 1e6:.3f} Mb/s"
        print(line)
    for e, pe in rep["edge_prices"].items():
        print(f"  edge {e}: p_e {pe:.6g}")
    print(f"  duality gap {rep['duality_gap']:.3e}")
    if rep["oracle"] and not rep["oracle"]["feasible"]:
        print("  oracle: no feasible grid point")
    if args.out:
        write_json(Path(args.out), rep)
    return 0


def bounds_table(sc: Scenario, rates: dict[str, float]) -> dict[str, dict[str, float]]:
    flows = list(sc.flows)
    return {f.id: {v: _bound(sc, flows, f, rates, v) for v in VARIANTS} for f in flows}


def cmd_bounds(args) -> int:
    sc = scenario_from_args(args)
    rates = parse_rates(args.rates, sc) if args.rates else equal_split(sc.network, sc.flows)
    table = bounds_table(sc, rates)
    print("flow  rate_Mbps  " + "  ".join(f"{v}_ms" for v in VARIANTS))
    for f in sc.flows:
        print(f"{f.id}  {rates[f.id] / 1e6:.3f}  " + "  ".join(_ms(table[f.id][v]) for v in VARIANTS))
    if args.out:
        write_json(Path(args.out), {"rates_bps": rates, "bounds_s": table})
    return 0


def fairness_report(sc: Scenario) -> dict:
    p = sc.params
    flows = list(sc.flows)
    allocs = {"equal_split": equal_split(sc.network, flows)}
    res = dual_descent_solve(sc.network, flows, StepSizes(p.gamma_e, p.gamma_j), p.bound_variant,
                             l_max=p.l_max, cs_threshold=p.cs_threshold)
    allocs["solver"] = res.rates
    out = {"variant": p.bound_variant, "solver_converged": res.converged}
    for name, rates in allocs.items():
        rows = {}
        for f in flows:
            b = _bound(sc, flows, f, rates, p.bound_variant)
            rows[f.id] = {"rate_bps": rates[f.id], "bound_s": b, "target_s": f.delay_target,
                          "verdict": "satisfied" if b <= f.delay_target * (1 + VERDICT_RTOL) else "violated"}
        out[name] = rows
    return out


def cmd_compare_fairness(args) -> int:
    sc = scenario_from_args(args)
    rep = fairness_report(sc)
    for name in ("equal_split", "solver"):
        print(f"{name} ({rep['variant']}):")
        for fid, r in rep[name].items():
            print(f"  {fid}: rate {r['rate_bps'] / 1e6:.3f} Mb/s  bound {_ms(r['bound_s'])} ms"
                  f"  target {_ms(r['target_s'])} ms  {r['verdict']}")
    if args.out:
        write_json(Path(args.out), rep)
    return 0


def cmd_twin(args) -> int:
    sc = scenario_from_args(args)
    out = _out_dir(args.out)
    report = {"scenario": sc.name, "seed": sc.params.seed, "joins": {}}
    for mode in MODES:
        run_sc = sc.with_overrides(mode=mode)
        sim = Simulation(run_sc, args.backend)
        trace = sim.run()
        write_trace(trace, out, f"{mode}_")
        write_json(out / f"{mode}_summary.json", summarize(trace, run_sc, sim.kernel.backend, fluid=False))
        report["joins"][mode] = join_transients(trace, run_sc)
    write_json(out / "transients.json", report)
    print("join      flow  mode        overshoot_ms  excess_ms  settling_s")
    for mode in MODES:
        for j in report["joins"][mode]:
            settle = "never" if j["settling_time_s"] is None else f"{j['settling_time_s']:.3f}"
            print(f"{j['join_s']:<9g} {j['flow']:<5} {mode:<11} {_ms(j['overshoot_s']):>12}"
                  f"  {_ms(j['max_excess_s']):>9}  {settle}")
    return 0


# -- entry point ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("bad_argument", message, 2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tcpslice", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver and controller warnings")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help, out_required=False):
        p.add_argument("--scenario", required=True,
                       help=f"scenario file, or a shipped name ({', '.join(shipped_names())})")
        p.add_argument("--out", required=out_required, help=out_help)
        p.add_argument("--seed", type=int)
        p.add_argument("--bound-variant", choices=VARIANTS)
        p.add_argument("--duration", type=float, help="simulated seconds")

    p = sub.add_parser("simulate", help="packet-level run, writes flows.csv, edges.csv, summary.json")
    common(p, "output directory", True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--backend", choices=available_backends())
    p.add_argument("--no-fluid", action="store_true", help="skip the per-epoch fluid optimum")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="fluid price iteration with an exhaustive check for small instances")
    common(p, "write the report as JSON to this file")
    p.add_argument("--no-oracle", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bounds", help="all delay-bound variants per flow at given rates")
    common(p, "write the table as JSON to this file")
    p.add_argument("--rates", help="comma-separated bit/s in flow order, or id=rate pairs (default: equal split)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("compare-fairness", help="equal split versus solver allocation")
    common(p, "write the report as JSON to this file")
    p.set_defaults(func=cmd_compare_fairness)

    p = sub.add_parser("twin", help="reactive and proactive runs on one seed with a join transient report")
    common(p, "output directory", True)
    p.add_argument("--backend", choices=available_backends())
    p.set_defaults(func=cmd_twin)
    return ap


def _fail(kind: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        _fail(exc.kind, str(exc), **exc.extra)
        return exc.code
    except ScenarioError as exc:
        _fail("invalid_scenario", str(exc), path=exc.path, details=exc.errors)
        return 2
    except OSError as exc:
        _fail("io_error", str(exc), path=exc.filename)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
