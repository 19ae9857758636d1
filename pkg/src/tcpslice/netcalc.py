"""Deterministic network calculus for token-bucket flows over FIFO links.

Curves are wide-sense increasing piecewise-linear functions of time on
``t >= 0``. Min-plus convolution is supported for convex curves only,
which covers rate-latency service curves and their concatenations.

Units: bits, bits/second, seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .topology import FlowSpec, Network, min_capacity

VARIANTS = ("overestimate", "tight", "packetized", "single_term")

_EPS = 1e-9


class ConvexityError(ValueError):
    pass


class UnstableLinkError(ValueError):
    pass


class UnboundedDelayError(ValueError):
    pass


@dataclass(frozen=True)
class PiecewiseLinearCurve:
    """Segments ``(start, value, slope)``; ``value`` is the curve at ``start``.

    The last segment extends to infinity.
    """

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        segs = self.segments
        if not segs or segs[0][0] != 0.0:
            raise ValueError("first segment must start at t=0")
        for (s0, v0, r0), (s1, v1, _) in zip(segs, segs[1:]):
            if not s1 > s0:
                raise ValueError("segment starts must be strictly increasing")
            end = v0 + r0 * (s1 - s0)
            if v1 < end - _EPS * max(1.0, abs(end)):
                raise ValueError("curve must not jump downwards")
        for s, v, r in segs:
            if r < 0 or v < 0:
                raise ValueError("curve must be non-negative and wide-sense increasing")

    @property
    def origin(self) -> float:
        return self.segments[0][1]

    def __call__(self, t):
        starts = np.array([s[0] for s in self.segments])
        vals = np.array([s[1] for s in self.segments])
        slopes = np.array([s[2] for s in self.segments])
        tt = np.asarray(t, dtype=float)
        idx = np.searchsorted(starts, tt, side="right") - 1
        idx = np.clip(idx, 0, len(starts) - 1)
        out = vals[idx] + slopes[idx] * (tt - starts[idx])
        return float(out) if out.ndim == 0 else out

    def is_convex(self) -> bool:
        segs = self.segments
        for (s0, v0, r0), (s1, v1, r1) in zip(segs, segs[1:]):
            end = v0 + r0 * (s1 - s0)
            if abs(v1 - end) > _EPS * max(1.0, abs(end)):
                return False
            if r1 < r0:
                return False
        return True

    def pieces(self) -> list[tuple[float, float]]:
        """``(length, slope)`` per segment; the final length is ``inf``."""
        segs = self.segments
        out = [(s1[0] - s0[0], s0[2]) for s0, s1 in zip(segs, segs[1:])]
        out.append((math.inf, segs[-1][2]))
        return out

    @classmethod
    def from_pieces(cls, origin: float, pieces: Iterable[tuple[float, float]]) -> "PiecewiseLinearCurve":
        segs: list[tuple[float, float, float]] = []
        t, v = 0.0, origin
        for length, slope in pieces:
            if length <= 0:
                continue
            if segs and segs[-1][2] == slope:
                pass  # extend the previous segment
            else:
                segs.append((t, v, slope))
            if math.isinf(length):
                break
            t += length
            v += slope * length
        if not segs:
            segs.append((0.0, origin, 0.0))
        return cls(tuple(segs))


@dataclass(frozen=True)
class TokenBucketCurve:
    sigma: float
    rate: float

    def __post_init__(self) -> None:
        if self.sigma < 0 or self.rate < 0:
            raise ValueError("token bucket parameters must be non-negative")

    def curve(self) -> PiecewiseLinearCurve:
        return PiecewiseLinearCurve(((0.0, self.sigma, self.rate),))


@dataclass(frozen=True)
class RateLatencyCurve:
    rate: float
    latency: float

    def __post_init__(self) -> None:
        if not self.rate > 0 or self.latency < 0:
            raise ValueError("rate-latency curve needs rate > 0 and latency >= 0")

    def curve(self) -> PiecewiseLinearCurve:
        if self.latency == 0:
            return PiecewiseLinearCurve(((0.0, 0.0, self.rate),))
        return PiecewiseLinearCurve(((0.0, 0.0, 0.0), (self.latency, 0.0, self.rate)))


def min_plus_convolve(f: PiecewiseLinearCurve, g: PiecewiseLinearCurve) -> PiecewiseLinearCurve:
    """Min-plus convolution of two convex piecewise-linear curves.

    Linear pieces of both operands are laid end to end in order of
    increasing slope, starting from ``f(0) + g(0)``.
    """
    if not (f.is_convex() and g.is_convex()):
        raise ConvexityError("convexity required: min-plus convolution of non-convex curves is unsupported")
    pieces = sorted(f.pieces() + g.pieces(), key=lambda p: p[1])
    return PiecewiseLinearCurve.from_pieces(f.origin + g.origin, pieces)


def concat_rate_latency(servers: Sequence[RateLatencyCurve]) -> RateLatencyCurve:
    if not servers:
        raise ValueError("cannot concatenate an empty list of servers")
    rate = min(s.rate for s in servers)
    latency = 0.0
    for s in servers:
        latency += s.latency
    return RateLatencyCurve(rate, latency)


def aggregate_arrivals(flows: Sequence[TokenBucketCurve]) -> TokenBucketCurve:
    if not flows:
        raise ValueError("cannot aggregate an empty list of arrival curves")
    sigma = 0.0
    rate = 0.0
    for b in flows:
        sigma += b.sigma
        rate += b.rate
    return TokenBucketCurve(sigma, rate)


def blind_multiplex(
    c: float, cross: TokenBucketCurve, extra_latency_bits: float = 0.0, edge: str | None = None
) -> RateLatencyCurve:
    """Leftover service ``[c t - sigma_2 - x_2 t - extra]^+`` for the tagged flow."""
    if not c > cross.rate:
        where = f" on edge {edge}" if edge is not None else ""
        raise UnstableLinkError(f"unstable link{where}: capacity {c:g} <= cross rate {cross.rate:g}")
    residual = c - cross.rate
    return RateLatencyCurve(residual, (cross.sigma + extra_latency_bits) / residual)


def horizontal_deviation(alpha: TokenBucketCurve, beta: RateLatencyCurve) -> float:
    if beta.rate < alpha.rate:
        raise UnboundedDelayError(
            f"unbounded delay: service rate {beta.rate:g} below arrival rate {alpha.rate:g}"
        )
    return beta.latency + alpha.sigma / beta.rate


def effective_service_curve(
    flow: FlowSpec,
    net: Network,
    flows: Sequence[FlowSpec],
    rates: Mapping[str, float],
    packetized: bool = False,
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> RateLatencyCurve:
    """End-to-end service for ``flow`` when every other active flow is
    assumed to cross every link of its path (identical bursts ``sigma``).

    The packetized form charges each link ``((n-1) sigma + l_max)`` at the
    rate ``c_s^m - x_{-s}``; the fluid form uses each link's own residual.
    """
    others = [f for f in flows if f.id != flow.id]
    n = len(others) + 1
    x_other = 0.0
    for f in others:
        x_other += rates[f.id]
    cm, caps = min_capacity(net, flow, cs_threshold)
    burst = (n - 1) * flow.sigma
    for c in caps:
        if not c > x_other:
            raise UnstableLinkError(f"unstable link on path of flow {flow.id}: capacity {c:g} <= {x_other:g}")
    residual = cm - x_other
    latency = 0.0
    if packetized:
        for _ in caps:
            latency += (burst + l_max) / residual
    else:
        for c in caps:
            latency += burst / (c - x_other)
    return RateLatencyCurve(residual, latency)


@dataclass(frozen=True)
class BoundTerms:
    """A delay bound of the form ``numerator / min_k (capacity_k - sum rates of others_k)``.

    Every variant reduces to this shape; the delay constraint
    ``bound <= d`` is equivalently ``capacity_k - sum(others_k) >= numerator / d``
    for every term.
    """

    flow: str
    numerator: float
    terms: tuple[tuple[float, tuple[str, ...]], ...]

    def residual(self, rates: Mapping[str, float]) -> float:
        best = math.inf
        for cap, others in self.terms:
            r = cap
            for j in others:
                r -= rates[j]
            if r < best:
                best = r
        return best

    def bound(self, rates: Mapping[str, float]) -> float:
        r = self.residual(rates)
        if not r > 0:
            raise UnboundedDelayError(
                f"bound undefined for flow {self.flow}: residual capacity {r:g} <= 0"
            )
        return self.numerator / r


def bound_terms(
    flow: FlowSpec,
    net: Network,
    flows: Sequence[FlowSpec],
    variant: str = "packetized",
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> BoundTerms:
    """Numerator and residual terms of the selected delay-bound variant.

    ``flows`` is the active set (``flow`` may or may not be in it).
    ``overestimate`` and ``single_term`` treat every other active flow as
    sharing every link; ``tight`` and ``packetized`` use the actual
    per-link source sets over the whole path.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown bound variant {variant!r}")
    cm, caps = min_capacity(net, flow, cs_threshold)
    others_all = tuple(f.id for f in flows if f.id != flow.id)
    sigma = flow.sigma
    if variant == "single_term":
        return BoundTerms(flow.id, sigma, ((cm, others_all),))
    if variant == "overestimate":
        n = len(others_all) + 1
        return BoundTerms(flow.id, (len(caps) * (n - 1) + 1) * sigma, ((cm, others_all),))
    terms = []
    most = 1
    for e in flow.path:
        others = tuple(f.id for f in flows if f.id != flow.id and e in f.path)
        most = max(most, len(others) + 1)
        terms.append((net.capacity(e), others))
    numerator = (len(caps) * (most - 1) + 1) * sigma
    if variant == "packetized":
        numerator += len(caps) * l_max
    return BoundTerms(flow.id, numerator, tuple(terms))


def delay_bound(
    flow: FlowSpec,
    net: Network,
    flows: Sequence[FlowSpec],
    rates: Mapping[str, float],
    variant: str = "packetized",
    l_max: float = 0.0,
    cs_threshold: float = math.inf,
) -> float:
    """Closed-form worst-case delay of ``flow`` given the other flows' rates.

    Raises :class:`UnboundedDelayError` when the relevant residual
    capacity is not positive.
    """
    return bound_terms(flow, net, flows, variant, l_max, cs_threshold).bound(rates)
