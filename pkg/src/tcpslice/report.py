"""Post-processing of simulation traces: epochs, steady-state levels,
bound audit totals and join transients."""

from __future__ import annotations

import math
from collections import defaultdict

from .netcalc import UnboundedDelayError, bound_terms
from .numopt import StepSizes, dual_descent_solve, dual_value, primal_objective
from .scenario import Scenario
from .simengine import TraceLog

STEADY_FRACTION = 0.2
SETTLE_INTERVALS = 10
TRANSIENT_HORIZON = 1.0  # seconds after a join examined for overshoot

SUMMARY_KEYS = ("scenario", "seed", "mode", "bound_variant", "duration_s", "backend", "epochs",
                "bound_audit", "events")
EPOCH_KEYS = ("start_s", "end_s", "active", "rates_bps", "edge_throughput_bps", "utilization",
              "bounds_s", "fluid_rates_bps", "fluid_converged", "duality_gap")


def json_safe(x):
    """Floats that JSON cannot carry become ``"inf"``/``"-inf"`` or ``None``."""
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {k: json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    return x


def epochs(sc: Scenario) -> list[tuple[float, float, tuple[str, ...]]]:
    """Maximal intervals with a fixed active set, in time order."""
    end = sc.params.duration
    cuts = {0.0, end}
    for f in sc.flows:
        for t in (f.join_time, f.leave_time):
            if 0.0 < t < end:
                cuts.add(t)
    cuts = sorted(cuts)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        active = tuple(f.id for f in sc.flows if f.join_time <= a < f.leave_time)
        out.append((a, b, active))
    return out


def _bounds_at(sc: Scenario, active, rates, variant):
    flows = [f for f in sc.flows if f.id in active]
    p = sc.params
    out = {}
    for f in flows:
        try:
            out[f.id] = bound_terms(f, sc.network, flows, variant, p.l_max, p.cs_threshold).bound(rates)
        except UnboundedDelayError:
            out[f.id] = math.inf
    return out


def fluid_optimum(sc: Scenario, active) -> tuple[dict, bool, float]:
    """Solver rates for an active set, whether it converged, and the
    relative duality gap at the returned prices."""
    p = sc.params
    flows = [f for f in sc.flows if f.id in active]
    if not flows:
        return {}, True, 0.0
    res = dual_descent_solve(sc.network, flows, StepSizes(p.gamma_e, p.gamma_j), p.bound_variant,
                             l_max=p.l_max, cs_threshold=p.cs_threshold)
    primal = primal_objective(flows, res.rates)
    dual = dual_value(res.prices, sc.network, flows, p.bound_variant, p.l_max, p.cs_threshold)
    gap = abs(dual - primal) / abs(primal) if primal else abs(dual - primal)
    return res.rates, res.converged, gap


def steady_state(trace: TraceLog, sc: Scenario, fluid: bool = True) -> list[dict]:
    """Per-epoch means over the last ``STEADY_FRACTION`` of each epoch."""
    by_flow = defaultdict(list)
    for row in trace.flows:
        by_flow[row[1]].append(row)
    by_edge = defaultdict(list)
    for row in trace.edges:
        by_edge[row[1]].append(row)
    out = []
    for a, b, active in epochs(sc):
        lo = b - STEADY_FRACTION * (b - a)
        rates = {}
        for fid in active:
            rs = [r[2] for r in by_flow[fid] if lo < r[0] <= b]
            rates[fid] = sum(rs) / len(rs) if rs else 0.0
        thr, util = {}, {}
        for e in sc.network.edges:
            users = [f.id for f in sc.flows if f.id in active and e.id in f.path]
            thr[e.id] = sum(rates[u] for u in users)
            us = [r[3] for r in by_edge[e.id] if lo < r[0] <= b]
            util[e.id] = sum(us) / len(us) if us else 0.0
        ep = {
            "start_s": a,
            "end_s": b,
            "active": list(active),
            "rates_bps": rates,
            "edge_throughput_bps": thr,
            "utilization": util,
            "bounds_s": _bounds_at(sc, active, rates, sc.params.bound_variant),
            "fluid_rates_bps": None,
            "fluid_converged": None,
            "duality_gap": None,
        }
        if fluid:
            fr, conv, gap = fluid_optimum(sc, active)
            ep.update(fluid_rates_bps=fr, fluid_converged=conv, duality_gap=gap)
        out.append(ep)
    return out


def audit_summary(trace: TraceLog) -> dict:
    eligible = [r for r in trace.audit if r[4]]
    bad = [r for r in eligible if r[2] > r[3]]
    ratio = max((r[2] / r[3] for r in eligible if r[3] > 0), default=0.0)
    return {
        "intervals": len(trace.audit),
        "eligible_intervals": len(eligible),
        "violations": len(bad),
        "worst_delay_to_bound": ratio,
        "first_violation_s": bad[0][0] if bad else None,
    }


def summarize(trace: TraceLog, sc: Scenario, backend: str, fluid: bool = True) -> dict:
    p = sc.params
    summary = {
        "scenario": sc.name,
        "seed": p.seed,
        "mode": p.mode,
        "bound_variant": p.bound_variant,
        "duration_s": p.duration,
        "backend": backend,
        "epochs": steady_state(trace, sc, fluid),
        "bound_audit": audit_summary(trace),
        "events": [{"time_s": t, "kind": k, "flow": f} for t, k, f in trace.events],
    }
    return json_safe(summary)


def join_transients(trace: TraceLog, sc: Scenario, horizon: float = TRANSIENT_HORIZON) -> list[dict]:
    """Bound overshoot and settling time after every join.

    Overshoot is how far any active flow's bound rises, within ``horizon``
    seconds of the join, above both its target and the highest bound that
    flow shows in the epoch's steady tail (last ``STEADY_FRACTION``); the
    tail band absorbs the marking noise around an active delay constraint.
    ``max_excess_s`` is the plain excess over target in the same window.

    Settling time is measured from the join to the first tick that starts a
    run of ``SETTLE_INTERVALS`` consecutive intervals with every active
    bound at or below its target; ``None`` if that never happens before
    the next join or leave, exclusive.
    """
    targets = {f.id: f.delay_target for f in sc.flows}
    ticks = defaultdict(dict)
    for row in trace.flows:
        ticks[row[0]][row[1]] = row[3]
    times = sorted(ticks)
    changes = sorted({t for t, _, _ in trace.events} | {sc.params.duration})
    out = []
    for t_join, kind, fid in trace.events:
        if kind != "join":
            continue
        t_next = next((c for c in changes if c > t_join), math.inf)
        window = [t for t in times if t_join < t < t_next]
        tail_lo = t_next - STEADY_FRACTION * (t_next - t_join)
        band = defaultdict(lambda: -math.inf)
        for t in window:
            if t > tail_lo:
                for k, b in ticks[t].items():
                    band[k] = max(band[k], b)
        overshoot = 0.0
        excess = 0.0
        for t in window:
            if t > t_join + horizon:
                break
            for k, b in ticks[t].items():
                excess = max(excess, b - targets[k])
                overshoot = max(overshoot, b - max(targets[k], band[k]))
        settle = None
        run = 0
        for i, t in enumerate(window):
            if all(b <= targets[k] for k, b in ticks[t].items()):
                run += 1
                if run == SETTLE_INTERVALS:
                    settle = window[i - SETTLE_INTERVALS + 1] - t_join
                    break
            else:
                run = 0
        out.append({"join_s": t_join, "flow": fid, "overshoot_s": overshoot, "max_excess_s": excess,
                    "settling_time_s": settle})
    return out
