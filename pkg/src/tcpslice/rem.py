"""Exponential ECN marking that encodes a source's price sum end to end,
and the host-side inversion from mark fractions back to prices."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .numopt import PriceVector
from .topology import FlowSpec


def marking_probability(flow: FlowSpec, edge: str, prices: PriceVector) -> float:
    """Per-hop probability ``1 - exp(-(p_{-s}/|E(s)| + p_e))``."""
    if edge not in flow.path:
        raise ValueError(f"edge {edge!r} is not on the path of flow {flow.id!r}")
    share = prices.p_minus(flow.id) / len(flow.path)
    return -math.expm1(-(share + prices.edge_prices.get(edge, 0.0)))


def end_to_end_mark_prob(flow: FlowSpec, prices: PriceVector) -> float:
    return -math.expm1(-prices.price_sum(flow))


def price_from_fraction(marked: float, total: float) -> float:
    """``-ln(1 - P_M)`` with ``P_M`` capped at ``1 - 1/(total + 1)``."""
    pm = min(marked / total, 1.0 - 1.0 / (total + 1.0))
    return -math.log1p(-pm)


@dataclass
class MarkEstimator:
    """Mark counts over a sliding window of ``window`` intervals.

    ``cumulative=True`` keeps all-time totals instead.
    """

    window: int = 1
    cumulative: bool = False
    window_marked: float = 0.0
    window_total: float = 0.0
    last_estimate: float = 0.0
    _history: deque = field(default_factory=deque, repr=False)

    def add_interval(self, marked: float, total: float) -> None:
        if self.cumulative:
            self.window_marked += marked
            self.window_total += total
            return
        self._history.append((marked, total))
        while len(self._history) > self.window:
            self._history.popleft()
        self.window_marked = sum(m for m, _ in self._history)
        self.window_total = sum(t for _, t in self._history)

    def reset(self, price_sum: float = 0.0, pseudo_total: float = 0.0) -> None:
        """Clear history, optionally seeding it with counts implying ``price_sum``."""
        self._history.clear()
        self.window_marked = 0.0
        self.window_total = 0.0
        self.last_estimate = price_sum
        if pseudo_total > 0:
            per = pseudo_total / max(self.window, 1)
            p = -math.expm1(-price_sum)
            for _ in range(1 if self.cumulative else self.window):
                self.add_interval(per * p, per)

    def update(self) -> float:
        self.last_estimate = estimate_price_sum(self)
        return self.last_estimate


def estimate_price_sum(est: MarkEstimator) -> float:
    if est.window_total <= 0:
        return est.last_estimate
    return price_from_fraction(est.window_marked, est.window_total)
