"""Delay-constrained network utility maximization solved by dual descent.

Sources pick ``x_s = U_s'^{-1}(p_{-s} + p^s)`` clamped to ``[m_s, M_s]``;
edges and sources then take projected gradient steps on the dual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .netcalc import BoundTerms, bound_terms
from .topology import FlowSpec, Network, sources_on_edge

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LogUtility:
    """``U(x) = a ln(1 + x)``."""

    weight: float = 1e5

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValueError("utility weight must be positive")

    def __call__(self, x):
        return self.weight * np.log1p(x)

    def derivative(self, x: float) -> float:
        return self.weight / (1.0 + x)

    def inverse_derivative(self, q: float) -> float:
        if q <= 0:
            return math.inf
        return self.weight / q - 1.0


@dataclass
class PriceVector:
    edge_prices: dict[str, float] = field(default_factory=dict)
    source_prices: dict[str, float] = field(default_factory=dict)

    def p_minus(self, flow_id: str) -> float:
        """Sum of source prices of every other source."""
        total = 0.0
        for j, p in self.source_prices.items():
            if j != flow_id:
                total += p
        return total

    def p_path(self, flow: FlowSpec) -> float:
        total = 0.0
        for e in flow.path:
            total += self.edge_prices.get(e, 0.0)
        return total

    def price_sum(self, flow: FlowSpec) -> float:
        return self.p_minus(flow.id) + self.p_path(flow)

    def copy(self) -> "PriceVector":
        return PriceVector(dict(self.edge_prices), dict(self.source_prices))


@dataclass(frozen=True)
class StepSizes:
    """Gradient step sizes, per bit/second of constraint slack.

    Defaults are 1e-6 (edges) and 1e-7 (sources) per Mbit/s.
    """

    gamma_e: float = 1e-12
    gamma_j: float = 1e-13

    def __post_init__(self) -> None:
        if not (self.gamma_e > 0 and self.gamma_j > 0):
            raise ValueError("step sizes must be positive")


def optimal_rate(prices: PriceVector, flow: FlowSpec, util: LogUtility | None = None) -> float:
    util = util or LogUtility(flow.utility_weight)
    x = util.inverse_derivative(prices.price_sum(flow))
    return min(max(x, flow.rate_min), flow.rate_max)


def rate_for_price_sum(q: float, flow: FlowSpec, util: LogUtility | None = None) -> float:
    util = util or LogUtility(flow.utility_weight)
    return min(max(util.inverse_derivative(q), flow.rate_min), flow.rate_max)


def source_slack(terms: BoundTerms, flow: FlowSpec, rates: Mapping[str, float]) -> float:
    """Smallest residual capacity minus ``numerator / d`` (negative when violated)."""
    return terms.residual(rates) - terms.numerator / flow.delay_target


def update_source_price(
    p_j: float,
    flow_j: FlowSpec,
    rates: Mapping[str, float],
    net: Network,
    flows: Sequence[FlowSpec],
    gamma_j: float,
    variant: str = "packetized",
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> float:
    """Projected step ``[p_j - gamma_j * slack_j]^+`` on a source's delay price.

    ``flows`` is the active set; it must contain ``flow_j``.
    """
    if len(flows) < 1 or all(f.id != flow_j.id for f in flows):
        raise ValueError("update_source_price needs at least one active source (including flow_j)")
    terms = bound_terms(flow_j, net, flows, variant, l_max, cs_threshold)
    return max(0.0, p_j - gamma_j * source_slack(terms, flow_j, rates))


def update_edge_price(p_e: float, capacity: float, rates: Mapping[str, float], gamma_e: float) -> float:
    """Projected step on a link price; ``rates`` are those of the sources on the link."""
    load = 0.0
    for x in rates.values():
        load += x
    return max(0.0, p_e - gamma_e * (capacity - load))


@dataclass
class SolveResult:
    rates: dict[str, float]
    prices: PriceVector
    iterations: int
    converged: bool
    max_rate_change: float = math.nan


class _Problem:
    """Index structure for one active set; reused across iterations."""

    def __init__(self, net, flows, variant, l_max, cs_threshold):
        self.net = net
        self.flows = list(flows)
        self.terms = {
            f.id: bound_terms(f, net, self.flows, variant, l_max, cs_threshold) for f in self.flows
        }
        self.edge_users = {}
        for e in net.edges:
            users = sources_on_edge(net, self.flows, e.id)
            if users:
                self.edge_users[e.id] = sorted(users)
        self.utils = {f.id: LogUtility(f.utility_weight) for f in self.flows}

    def rates(self, prices: PriceVector) -> dict[str, float]:
        return {f.id: optimal_rate(prices, f, self.utils[f.id]) for f in self.flows}

    def kkt_residual(self, prices: PriceVector, rates: Mapping[str, float]) -> float:
        """Largest constraint violation or complementary-slackness gap, in bit/s."""
        worst = 0.0
        for e, users in self.edge_users.items():
            slack = self.net.capacity(e) - sum(rates[s] for s in users)
            worst = max(worst, -slack)
            if prices.edge_prices.get(e, 0.0) > 0:
                worst = max(worst, slack)
        for f in self.flows:
            slack = source_slack(self.terms[f.id], f, rates)
            worst = max(worst, -slack)
            if prices.source_prices.get(f.id, 0.0) > 0:
                worst = max(worst, slack)
        return worst

    def step(self, prices: PriceVector, steps: StepSizes) -> dict[str, float]:
        """One synchronous sweep: rates, then edge prices, then source prices."""
        rates = self.rates(prices)
        edge_prices = dict(prices.edge_prices)
        for e, users in self.edge_users.items():
            edge_prices[e] = update_edge_price(
                prices.edge_prices.get(e, 0.0),
                self.net.capacity(e),
                {s: rates[s] for s in users},
                steps.gamma_e,
            )
        source_prices = {}
        for f in self.flows:
            slack = source_slack(self.terms[f.id], f, rates)
            source_prices[f.id] = max(0.0, prices.source_prices.get(f.id, 0.0) - steps.gamma_j * slack)
        prices.edge_prices = edge_prices
        prices.source_prices = source_prices
        return rates


def dual_descent_solve(
    net: Network,
    flows: Sequence[FlowSpec],
    steps: StepSizes = StepSizes(),
    variant: str = "packetized",
    max_iters: int = 1_000_000,
    rate_tol: float | None = None,
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
    window: int = 10,
    initial: PriceVector | None = None,
) -> SolveResult:
    """Iterate price sweeps from zero prices until rates settle.

    Converged means that for ``window`` consecutive sweeps every rate moved
    less than ``rate_tol`` (default 1e-5 of that flow's ``rate_max``) and no
    constraint is violated, or slack under a positive price, by more than
    that amount.
    Non-convergence is reported, not raised.
    """
    if not flows:
        return SolveResult({}, PriceVector(), 0, True, 0.0)
    prob = _Problem(net, flows, variant, l_max, cs_threshold)
    prices = initial.copy() if initial is not None else PriceVector()
    tol = {f.id: (rate_tol if rate_tol is not None else 1e-5 * f.rate_max) for f in prob.flows}
    prev = prob.rates(prices)
    calm = 0
    change = math.inf
    for it in range(1, max_iters + 1):
        prob.step(prices, steps)
        rates = prob.rates(prices)
        change = max(abs(rates[k] - prev[k]) for k in rates)
        if all(abs(rates[k] - prev[k]) < tol[k] for k in rates) and prob.kkt_residual(prices, rates) < min(tol.values()):
            calm += 1
            if calm >= window:
                return SolveResult(rates, prices, it, True, change)
        else:
            calm = 0
        prev = rates
    log.warning("dual descent did not converge in %d sweeps (last change %.3g bit/s)", max_iters, change)
    return SolveResult(prev, prices, max_iters, False, change)


def primal_objective(flows: Sequence[FlowSpec], rates: Mapping[str, float]) -> float:
    return float(sum(LogUtility(f.utility_weight)(rates[f.id]) for f in flows))


def dual_value(
    prices: PriceVector,
    net: Network,
    flows: Sequence[FlowSpec],
    variant: str = "packetized",
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> float:
    """``Y(p) = sum_s B_s + sum_s p_s (R_s - N_s/d_s) + sum_e p_e c_e``.

    For the overestimate and single-term variants ``R_s = min C_s``. The
    per-link variants use the rate-dependent ``R_s`` evaluated at the
    price-optimal rates, so ``Y`` is the Lagrangian at those rates.
    """
    prob = _Problem(net, flows, variant, l_max, cs_threshold)
    rates = prob.rates(prices)
    total = 0.0
    for f in prob.flows:
        q = prices.price_sum(f)
        x = rates[f.id]
        total += float(prob.utils[f.id](x)) - x * q
        terms = prob.terms[f.id]
        x_other = sum(rates[j] for j in rates if j != f.id)
        r_eff = terms.residual(rates) + x_other
        total += prices.source_prices.get(f.id, 0.0) * (r_eff - terms.numerator / f.delay_target)
    for e in prob.edge_users:
        total += prices.edge_prices.get(e, 0.0) * net.capacity(e)
    return total


@dataclass
class OracleResult:
    feasible: bool
    rates: dict[str, float]
    objective: float


def brute_force_primal(
    net: Network,
    flows: Sequence[FlowSpec],
    variant: str = "packetized",
    grid_step: float = 1e5,
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> OracleResult:
    """Exhaustive grid search for the delay- and capacity-constrained optimum.

    Delay feasibility is ``bound <= d_s`` with a positive residual; the
    grid spans ``[m_s, M_s]`` in steps of ``grid_step`` (endpoints kept).
    """
    flows = list(flows)
    if not flows:
        return OracleResult(True, {}, 0.0)
    ids = [f.id for f in flows]
    pos = {k: i for i, k in enumerate(ids)}
    grids = [np.append(np.arange(f.rate_min, f.rate_max, grid_step), f.rate_max) for f in flows]
    utils = [LogUtility(f.utility_weight)(g) for f, g in zip(flows, grids)]

    # linear rows a.x <= rhs: link capacities, then one row per delay term
    rows: list[tuple[np.ndarray, float]] = []
    for e in net.edges:
        users = [pos[f.id] for f in flows if e.id in f.path]
        if users:
            a = np.zeros(len(flows))
            a[users] = 1.0
            rows.append((a, e.capacity))
    for f in flows:
        terms = bound_terms(f, net, flows, variant, l_max, cs_threshold)
        need = terms.numerator / f.delay_target
        for cap, others in terms.terms:
            a = np.zeros(len(flows))
            a[[pos[o] for o in others]] = 1.0
            rows.append((a, cap - need))

    rest = np.meshgrid(*grids[1:], indexing="ij")
    rest_util = sum(np.meshgrid(*utils[1:], indexing="ij")) if rest else np.float64(0.0)
    best_val = -math.inf
    best = None
    for x0, u0 in zip(grids[0], utils[0]):
        ok = np.ones(np.shape(rest_util), dtype=bool)
        for a, rhs in rows:
            lhs = a[0] * x0
            for i, m in enumerate(rest, start=1):
                if a[i]:
                    lhs = lhs + m
            ok &= lhs <= rhs + 1e-6
        if not np.any(ok):
            continue
        val = np.where(ok, u0 + rest_util, -np.inf)
        k = int(np.argmax(val))
        v = float(np.ravel(val)[k])
        if v > best_val:
            best_val = v
            best = dict(zip(ids, [float(x0)] + [float(m.ravel()[k]) for m in rest]))
    if best is None:
        return OracleResult(False, {}, -math.inf)
    return OracleResult(True, best, best_val)


def equal_split(net: Network, flows: Sequence[FlowSpec]) -> dict[str, float]:
    """Each source gets its smallest per-link equal share, clamped to its interval."""
    out = {}
    for f in flows:
        share = min(net.capacity(e) / len(sources_on_edge(net, flows, e)) for e in f.path)
        out[f.id] = min(max(share, f.rate_min), f.rate_max)
    return out


__all__ = [
    "LogUtility",
    "PriceVector",
    "StepSizes",
    "SolveResult",
    "OracleResult",
    "optimal_rate",
    "rate_for_price_sum",
    "update_source_price",
    "update_edge_price",
    "dual_descent_solve",
    "dual_value",
    "brute_force_primal",
    "primal_objective",
    "equal_split",
]
