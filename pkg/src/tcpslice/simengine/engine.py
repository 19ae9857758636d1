"""Price-tick controller around the packet kernel.

Every update interval the controller reads per-link byte counters, takes
one dual step on edge and source prices, pushes per-flow marking
probabilities to the links, and lets each host turn its ECN mark fraction
into a new token-bucket rate.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

from ..netcalc import UnboundedDelayError, bound_terms
from ..numopt import (
    PriceVector,
    StepSizes,
    dual_descent_solve,
    rate_for_price_sum,
    update_edge_price,
    update_source_price,
)
from ..rem import MarkEstimator, marking_probability
from ..scenario import Scenario
from ..topology import FlowSpec, active_at
from .kernel import get_kernel

log = logging.getLogger(__name__)


@dataclass
class HostState:
    flow: FlowSpec
    index: int
    estimator: MarkEstimator
    rate: float = 0.0
    rate_area: float = 0.0  # bits sent-rate integral since the last tick
    rate_since: float = 0.0


@dataclass
class ControllerState:
    source_prices: dict[str, float] = field(default_factory=dict)
    edge_prices: dict[str, float] = field(default_factory=dict)
    measured: dict[str, float] = field(default_factory=dict)
    active: list[FlowSpec] = field(default_factory=list)


@dataclass
class TraceLog:
    """Per-interval records; column order matches the CSV outputs."""

    flows: list[tuple] = field(default_factory=list)
    edges: list[tuple] = field(default_factory=list)
    source_prices: list[tuple] = field(default_factory=list)  # (time, flow, p_j)
    audit: list[tuple] = field(default_factory=list)  # (time, flow, max_delay, bound, eligible)
    events: list[tuple] = field(default_factory=list)  # (time, kind, flow)
    delay_samples: dict[str, list[float]] = field(default_factory=dict)

    FLOW_COLUMNS = ("time_s", "flow_id", "rate_bps", "bound_s", "mean_delay_s", "max_delay_s",
                    "marked", "total", "price_estimate")
    EDGE_COLUMNS = ("time_s", "edge_id", "p_e", "utilization", "queue_bits")


class Simulation:
    def __init__(self, scenario: Scenario, backend: str | None = None, record_departures: bool = False):
        self.sc = scenario
        p = scenario.params
        self.p = p
        net = scenario.network
        self.net = net
        self.flows = list(scenario.flows)
        self.flow_index = {f.id: i for i, f in enumerate(self.flows)}
        self.edge_ids = [e.id for e in net.edges]
        self.edge_index = {e: i for i, e in enumerate(self.edge_ids)}
        kernel_cls = get_kernel(backend)
        self.kernel = kernel_cls(
            [[self.edge_index[e] for e in f.path] for f in self.flows],
            [e.capacity for e in net.edges],
            [e.prop_delay for e in net.edges],
            [sum(net.edge(e).prop_delay for e in f.path) for f in self.flows],
            [f.sigma for f in self.flows],
            p.packet_size,
            p.seed,
            record_departures,
        )
        self.ctrl = ControllerState(edge_prices={e: 0.0 for e in self.edge_ids})
        self.hosts: dict[str, HostState] = {}
        self.steps = StepSizes(p.gamma_e, p.gamma_j)
        self.trace = TraceLog()
        self._last_tick = 0.0
        self._pending: list[tuple[float, dict]] = []  # delayed marking installs
        self._tick_log: deque = deque(maxlen=int(p.audit_horizon / p.update_interval) + 3)
        self._audit_terms: dict[str, object] = {}
        self._last_change = 0.0

    # -- host / rate bookkeeping ------------------------------------------

    def _set_rate(self, host: HostState, rate: float, t: float) -> None:
        host.rate_area += host.rate * (t - host.rate_since)
        host.rate_since = t
        host.rate = rate
        self.kernel.set_rate(host.index, rate, t)

    def _new_estimator(self) -> MarkEstimator:
        return MarkEstimator(self.p.estimator_window, self.p.estimator == "cumulative")

    def _install_marking(self, table: dict, t: float) -> None:
        if self.p.control_delay > 0:
            self._pending.append((t + self.p.control_delay, table))
        else:
            self._apply_marking(table)

    def _apply_marking(self, table: dict) -> None:
        for (link, f), prob in table.items():
            self.kernel.set_marking(link, f, prob)

    def _marking_table(self) -> dict:
        prices = PriceVector(dict(self.ctrl.edge_prices), dict(self.ctrl.source_prices))
        table = {}
        for f in self.ctrl.active:
            fi = self.flow_index[f.id]
            for e in f.path:
                table[(self.edge_index[e], fi)] = marking_probability(f, e, prices)
        return table

    # -- events ----------------------------------------------------------

    def _join(self, flow: FlowSpec, t: float) -> None:
        self.trace.events.append((t, "join", flow.id))
        self._last_change = t
        self.ctrl.active.append(flow)
        self.ctrl.active.sort(key=lambda f: self.flow_index[f.id])
        idx = self.flow_index[flow.id]
        host = HostState(flow, idx, self._new_estimator(), rate=0.0, rate_since=t)
        self.hosts[flow.id] = host
        self.ctrl.source_prices[flow.id] = 0.0
        for e in flow.path:
            self.kernel.set_marking(self.edge_index[e], idx, 0.0)
        self._audit_terms.clear()
        if self.p.mode == "proactive" and self._proactive(flow, t):
            return
        host.rate = flow.rate_min
        self.kernel.activate(idx, flow.rate_min, t)

    def _proactive(self, joining: FlowSpec, t: float) -> bool:
        p = self.p
        res = dual_descent_solve(
            self.net, self.ctrl.active, self.steps, p.bound_variant,
            l_max=p.l_max, cs_threshold=p.cs_threshold,
        )
        if not res.converged:
            log.warning("twin solve did not converge at join of %s; staying reactive", joining.id)
            return False
        self.ctrl.edge_prices.update(res.prices.edge_prices)
        self.ctrl.source_prices.update(res.prices.source_prices)
        self._apply_marking(self._marking_table())
        for f in self.ctrl.active:
            host = self.hosts[f.id]
            q = res.prices.price_sum(f)
            window_s = p.estimator_window * p.update_interval
            host.estimator.reset(q, res.rates[f.id] * window_s / p.packet_size)
            if f.id == joining.id:
                host.rate = res.rates[f.id]
                self.kernel.activate(host.index, host.rate, t)
            else:
                self._set_rate(host, res.rates[f.id], t)
        return True

    def _leave(self, flow: FlowSpec, t: float) -> None:
        self.trace.events.append((t, "leave", flow.id))
        self._last_change = t
        self.ctrl.active = [f for f in self.ctrl.active if f.id != flow.id]
        self.ctrl.source_prices.pop(flow.id, None)
        host = self.hosts.pop(flow.id)
        self.kernel.deactivate(host.index, t)
        self._audit_terms.clear()

    def _tick(self, t: float) -> None:
        p = self.p
        prev = self._last_tick
        dt = t - prev
        self._last_tick = t
        arr, dep, dcount, dsum, dmax, acks, marks, qbits = self.kernel.take_counters()
        nf = len(self.flows)

        # switch reports: per-flow rate at its ingress link, per-link load
        measured = {}
        for f in self.ctrl.active:
            fi = self.flow_index[f.id]
            measured[f.id] = arr[self.edge_index[f.path[0]] * nf + fi] / dt
        self.ctrl.measured = measured
        for e in self.edge_ids:
            li = self.edge_index[e]
            loads = {fl.id: arr[li * nf + i] / dt for i, fl in enumerate(self.flows) if arr[li * nf + i]}
            self.ctrl.edge_prices[e] = update_edge_price(
                self.ctrl.edge_prices[e], self.net.capacity(e), loads, p.gamma_e
            )
        new_sp = {}
        for f in self.ctrl.active:
            new_sp[f.id] = update_source_price(
                self.ctrl.source_prices.get(f.id, 0.0), f, measured, self.net, self.ctrl.active,
                p.gamma_j, p.bound_variant, p.l_max, p.cs_threshold,
            )
        self.ctrl.source_prices = new_sp
        self._install_marking(self._marking_table(), t)

        # interval-average sending rates
        avg = {}
        for f in self.ctrl.active:
            h = self.hosts[f.id]
            area = h.rate_area + h.rate * (t - h.rate_since)
            span = t - max(prev, f.join_time)
            avg[f.id] = area / span if span > 0 else h.rate
            h.rate_area = 0.0
            h.rate_since = t

        bounds = self._bounds(avg, p.bound_variant)
        audit_bounds = self._audit_bounds(t, qbits)
        for f in self.ctrl.active:
            fi = self.flow_index[f.id]
            h = self.hosts[f.id]
            h.estimator.add_interval(marks[fi], acks[fi])
            if h.estimator.window_total > 0:
                q = h.estimator.update()
                self._set_rate(h, rate_for_price_sum(q, f), t)
            n = dcount[fi]
            mean = dsum[fi] / n if n else math.nan
            mx = dmax[fi] if n else math.nan
            self.trace.flows.append((t, f.id, avg[f.id], bounds[f.id], mean, mx, marks[fi], acks[fi],
                                     h.estimator.last_estimate))
            self.trace.source_prices.append((t, f.id, self.ctrl.source_prices[f.id]))
            if n:
                ab = audit_bounds.get(f.id)
                self.trace.audit.append((t, f.id, mx, ab if ab is not None else math.inf, ab is not None))
        for e in self.edge_ids:
            li = self.edge_index[e]
            util = dep[li] / (self.net.capacity(e) * dt)
            self.trace.edges.append((t, e, self.ctrl.edge_prices[e], util, qbits[li]))

    def _bounds(self, rates: dict, variant: str) -> dict[str, float]:
        out = {}
        p = self.p
        for f in self.ctrl.active:
            try:
                terms = bound_terms(f, self.net, self.ctrl.active, variant, p.l_max, p.cs_threshold)
                out[f.id] = terms.bound(rates)
            except UnboundedDelayError:
                out[f.id] = math.inf
        return out

    def _audit_bounds(self, t: float, qbits) -> dict[str, float]:
        """Packetized bounds for intervals where the network is in a state
        conformant traffic could have produced.

        Eligible when no join/leave happened within the audit horizon, the
        flows' peak bucket rates over that horizon fit under every link
        capacity, and at the start of the horizon every link's backlog was
        at most ``|S(l)| sigma + l_max``. The bound uses the peak rates.
        """
        p = self.p
        self._tick_log.append((t, {f.id: self.hosts[f.id].rate for f in self.ctrl.active}, list(qbits)))
        horizon = p.audit_horizon
        if t - self._last_change < horizon + p.update_interval - 1e-12:
            return {}
        lo = t - horizon - 1e-12
        window = [entry for entry in self._tick_log if entry[0] >= lo]
        start_q = window[0][2]
        peak = {}
        for f in self.ctrl.active:
            peak[f.id] = max(entry[1].get(f.id, 0.0) for entry in window)
        sigma = max((f.sigma for f in self.ctrl.active), default=0.0)
        for e in self.net.edges:
            users = [f for f in self.ctrl.active if e.id in f.path]
            if sum(peak[f.id] for f in users) > e.capacity:
                return {}
            if start_q[self.edge_index[e.id]] > len(users) * sigma + p.l_max:
                return {}
        out = {}
        for f in self.ctrl.active:
            terms = self._audit_terms.get(f.id)
            if terms is None:
                terms = bound_terms(f, self.net, self.ctrl.active, "packetized", p.l_max, p.cs_threshold)
                self._audit_terms[f.id] = terms
            try:
                out[f.id] = terms.bound(peak)
            except UnboundedDelayError:
                pass
        return out

    # -- main loop -------------------------------------------------------

    def run(self) -> TraceLog:
        p = self.p
        end = p.duration
        changes = []
        for f in self.flows:
            if f.join_time < end:
                changes.append((f.join_time, 1, self.flow_index[f.id], f))
            if f.leave_time < end:
                changes.append((f.leave_time, 0, self.flow_index[f.id], f))
        changes.sort(key=lambda c: (c[0], c[1], c[2]))  # leaves before joins at equal times
        ci = 0
        k = 1
        next_tick = p.update_interval
        while True:
            next_change = changes[ci][0] if ci < len(changes) else math.inf
            next_install = self._pending[0][0] if self._pending else math.inf
            t = min(next_tick, next_change, next_install)
            if t > end + 1e-12:
                break
            self.kernel.run_until(t)
            # at equal times: pending installs, then the tick closing the
            # interval, then joins/leaves opening the next one
            if t == next_install:
                self._apply_marking(self._pending.pop(0)[1])
            elif t == next_tick:
                self._tick(t)
                k += 1
                next_tick = k * p.update_interval
            else:
                _, kind, _, f = changes[ci]
                ci += 1
                if kind == 1:
                    self._join(f, t)
                else:
                    self._leave(f, t)
        return self.trace


def run(scenario: Scenario, backend: str | None = None) -> TraceLog:
    """Simulate ``scenario`` end to end; identical inputs give identical traces."""
    return Simulation(scenario, backend).run()
