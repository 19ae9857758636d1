"""Graph model: directed capacitated edges, static flow paths and the
index sets E(s), S(e), C_s used by the delay-bound formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class TopologyError(ValueError):
    """Raised for references to unknown edges or unusable flow paths."""


@dataclass(frozen=True)
class Edge:
    id: str
    src: str
    dst: str
    capacity: float  # bits/second
    prop_delay: float = 0.0  # seconds
    packetized: bool = True


@dataclass(frozen=True)
class Network:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {e.id: e for e in self.edges})

    def edge(self, edge_id: str) -> Edge:
        try:
            return self._by_id[edge_id]
        except KeyError:
            raise TopologyError(f"unknown edge {edge_id!r}") from None

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._by_id

    def capacity(self, edge_id: str) -> float:
        return self.edge(edge_id).capacity


@dataclass(frozen=True)
class FlowSpec:
    """One source: its fixed path, token-bucket depth and rate interval.

    ``sigma`` is in bits, rates in bits/second, times in seconds.
    """

    id: str
    source: str
    destination: str
    path: tuple[str, ...]
    sigma: float
    rate_min: float
    rate_max: float
    delay_target: float
    utility_weight: float = 1e5
    join_time: float = 0.0
    leave_time: float = math.inf


def active_at(flows: Iterable[FlowSpec], t: float) -> tuple[FlowSpec, ...]:
    """Flows with ``join_time <= t < leave_time``."""
    return tuple(f for f in flows if f.join_time <= t < f.leave_time)


def sources_on_edge(net: Network, flows: Iterable[FlowSpec], edge_id: str) -> frozenset[str]:
    net.edge(edge_id)
    return frozenset(f.id for f in flows if edge_id in f.path)


def edges_of_source(flow: FlowSpec) -> list[str]:
    return list(flow.path)


def min_capacity(
    net: Network, flow: FlowSpec, threshold: float = math.inf
) -> tuple[float, list[float]]:
    """Return ``(c_s^m, C_s)``.

    A path link belongs to C_s when its capacity is strictly below
    ``threshold`` times the smallest capacity on the path; the default
    keeps every link.
    """
    caps = [net.capacity(e) for e in flow.path]
    if not caps:
        raise TopologyError(f"flow {flow.id!r} has an empty path")
    floor = min(caps)
    included = [c for c in caps if c == floor or c < threshold * floor]
    if not included:
        raise TopologyError(f"flow {flow.id!r}: every link filtered out of C_s")
    return min(included), included


def validate(net: Network, flows: Sequence[FlowSpec]) -> list[str]:
    """Return every violated invariant as a message; empty means valid."""
    errors: list[str] = []
    vertices = set(net.vertices)
    seen: set[str] = set()
    for e in net.edges:
        if e.id in seen:
            errors.append(f"edge {e.id}: duplicate id")
        seen.add(e.id)
        for end in (e.src, e.dst):
            if end not in vertices:
                errors.append(f"edge {e.id}: unknown vertex {end!r}")
        if not e.capacity > 0:
            errors.append(f"edge {e.id}: capacity must be positive")
        if e.prop_delay < 0:
            errors.append(f"edge {e.id}: negative propagation delay")

    flow_ids: set[str] = set()
    for f in flows:
        where = f"flow {f.id}"
        if f.id in flow_ids:
            errors.append(f"{where}: duplicate id")
        flow_ids.add(f.id)
        if not f.rate_min > 0:
            errors.append(f"{where}: rate_min must be positive")
        if f.rate_min > f.rate_max:
            errors.append(f"{where}: rate interval empty (rate_min > rate_max)")
        if not f.delay_target > 0:
            errors.append(f"{where}: delay_target must be positive")
        if f.sigma < 0:
            errors.append(f"{where}: negative sigma")
        if not f.utility_weight > 0:
            errors.append(f"{where}: utility_weight must be positive")
        if not f.join_time < f.leave_time:
            errors.append(f"{where}: join_time must precede leave_time")
        if not f.path:
            errors.append(f"{where}: empty path")
            continue
        unknown = [e for e in f.path if not net.has_edge(e)]
        if unknown:
            errors.append(f"{where}: unknown edges {unknown}")
            continue
        if len(set(f.path)) != len(f.path):
            errors.append(f"{where}: path repeats an edge")
        at = f.source
        for e in f.path:
            edge = net.edge(e)
            if edge.src != at:
                errors.append(f"{where}: path is not a walk at edge {e} (expected tail {at})")
                break
            at = edge.dst
        else:
            if at != f.destination:
                errors.append(f"{where}: path ends at {at}, not {f.destination}")

    for e in net.edges:
        users = [f for f in flows if e.id in f.path]
        need = sum(f.rate_min for f in users)
        if users and need > e.capacity:
            errors.append(
                f"edge {e.id}: minimum rates infeasible ({need:g} > {e.capacity:g} bit/s)"
            )
    return errors
