"""Scenario files: an INI-style text format with ``[network]``,
``[flow.<id>]``, ``[schedule]`` and ``[params]`` sections.

Rates are bits/second, times seconds, packet sizes and bursts bytes (or
packets for ``sigma_packets``). See the README for every key.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .netcalc import VARIANTS
from .topology import Edge, FlowSpec, Network, validate

MODES = ("reactive", "proactive")
ESTIMATORS = ("window", "cumulative")


class ScenarioError(ValueError):
    def __init__(self, errors: list[str], path: str | None = None):
        self.errors = list(errors)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.errors))


@dataclass(frozen=True)
class Params:
    gamma_e: float = 1e-12
    gamma_j: float = 1e-13
    update_interval: float = 5e-3
    bound_variant: str = "packetized"
    estimator: str = "window"
    estimator_window: int = 1
    mode: str = "reactive"
    packet_size: float = 1518 * 8  # bits
    l_max: float = 1518 * 8  # bits
    cs_threshold: float = math.inf
    control_delay: float = 0.0
    audit_horizon: float = 0.1
    duration: float = 10.0
    seed: int = 1


@dataclass(frozen=True)
class Scenario:
    network: Network
    flows: tuple[FlowSpec, ...]
    params: Params = field(default_factory=Params)
    name: str = ""

    def with_overrides(self, **kw) -> "Scenario":
        """Replace parameters by name, ignoring ``None`` values."""
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, params=replace(self.params, **kw)) if kw else self


_PARAM_KEYS = {
    "gamma_e": ("gamma_e", float),
    "gamma_j": ("gamma_j", float),
    "update_interval_s": ("update_interval", float),
    "bound_variant": ("bound_variant", str),
    "estimator": ("estimator", str),
    "estimator_window": ("estimator_window", int),
    "mode": ("mode", str),
    "cs_threshold": ("cs_threshold", float),
    "control_delay_s": ("control_delay", float),
    "audit_horizon_s": ("audit_horizon", float),
    "duration_s": ("duration", float),
    "seed": ("seed", int),
}

_FLOW_KEYS = {"source", "destination", "path", "rate_min_bps", "rate_max_bps", "delay_target_s",
              "utility_weight", "sigma_packets", "sigma_bytes"}


def _num(text: str, where: str, errors: list[str], kind=float):
    try:
        return kind(float(text)) if kind is int else kind(text)
    except ValueError:
        errors.append(f"{where}: expected a number, got {text!r}")
        return None


def parse_scenario(text: str, name: str = "", path: str | None = None) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=path or "<scenario>")
    except configparser.Error as exc:
        raise ScenarioError([f"parse error: {exc}"], path) from None

    errors: list[str] = []
    params = Params()
    if cp.has_section("params"):
        updates = {}
        for key, raw in cp.items("params"):
            if key == "packet_size_bytes":
                v = _num(raw, "params.packet_size_bytes", errors)
                if v is not None:
                    updates["packet_size"] = v * 8
            elif key == "l_max_bytes":
                v = _num(raw, "params.l_max_bytes", errors)
                if v is not None:
                    updates["l_max"] = v * 8
            elif key in _PARAM_KEYS:
                attr, kind = _PARAM_KEYS[key]
                v = raw.strip() if kind is str else _num(raw, f"params.{key}", errors, kind)
                if v is not None:
                    updates[attr] = v
            else:
                errors.append(f"params.{key}: unknown key")
        params = replace(params, **updates)

    if not cp.has_section("network"):
        errors.append("missing [network] section")
        raise ScenarioError(errors, path)
    vertices: tuple[str, ...] = ()
    edges = []
    for key, raw in cp.items("network"):
        if key == "vertices":
            vertices = tuple(raw.replace(",", " ").split())
        elif key.startswith("edge."):
            parts = raw.split()
            eid = key[5:]
            if len(parts) not in (3, 4, 5):
                errors.append(f"network.{key}: expected 'from to capacity_bps [prop_delay_s] [fluid]'")
                continue
            cap = _num(parts[2], f"network.{key}", errors)
            prop = _num(parts[3], f"network.{key}", errors) if len(parts) >= 4 else 0.0
            packetized = True
            if len(parts) == 5:
                if parts[4] not in ("fluid", "packetized"):
                    errors.append(f"network.{key}: last field must be 'fluid' or 'packetized'")
                packetized = parts[4] != "fluid"
            if cap is not None and prop is not None:
                edges.append(Edge(eid, parts[0], parts[1], cap, prop, packetized))
        else:
            errors.append(f"network.{key}: unknown key")
    net = Network(vertices, tuple(edges))

    schedule: dict[str, tuple[float, float]] = {}
    if cp.has_section("schedule"):
        for key, raw in cp.items("schedule"):
            parts = raw.split()
            if len(parts) != 2:
                errors.append(f"schedule.{key}: expected 'join_s leave_s'")
                continue
            a = _num(parts[0], f"schedule.{key}", errors)
            b = _num(parts[1], f"schedule.{key}", errors)
            if a is not None and b is not None:
                schedule[key] = (a, b)

    flows = []
    for section in cp.sections():
        if not section.startswith("flow."):
            if section not in ("network", "schedule", "params"):
                errors.append(f"[{section}]: unknown section")
            continue
        fid = section[5:]
        sec = dict(cp.items(section))
        for key in sec:
            if key not in _FLOW_KEYS:
                errors.append(f"{section}.{key}: unknown key")
        missing = [k for k in ("source", "destination", "path") if k not in sec]
        if missing:
            errors.append(f"{section}: missing {', '.join(missing)}")
            continue

        def get(key, default):
            return _num(sec[key], f"{section}.{key}", errors) if key in sec else default

        if "sigma_bytes" in sec:
            sigma = get("sigma_bytes", 0.0)
            sigma = None if sigma is None else sigma * 8
        else:
            n = get("sigma_packets", 1.0)
            sigma = None if n is None else n * params.packet_size
        join, leave = schedule.pop(fid, (0.0, math.inf))
        vals = dict(
            rate_min=get("rate_min_bps", 1e6),
            rate_max=get("rate_max_bps", 100e6),
            delay_target=get("delay_target_s", 1e-3),
            utility_weight=get("utility_weight", 1e5),
        )
        if sigma is None or any(v is None for v in vals.values()):
            continue
        flows.append(FlowSpec(fid, sec["source"], sec["destination"],
                              tuple(sec["path"].replace(",", " ").split()), sigma,
                              join_time=join, leave_time=leave, **vals))
    for fid in schedule:
        errors.append(f"schedule.{fid}: no such flow")

    errors.extend(validate(net, flows))
    errors.extend(_check_params(params, flows))
    if errors:
        raise ScenarioError(errors, path)
    return Scenario(net, tuple(flows), params, name)


def _check_params(p: Params, flows) -> list[str]:
    errs = []
    for attr in ("gamma_e", "gamma_j", "update_interval", "packet_size", "l_max", "cs_threshold",
                 "audit_horizon", "duration"):
        if not getattr(p, attr) > 0:
            errs.append(f"params.{attr}: must be positive")
    if p.control_delay < 0:
        errs.append("params.control_delay_s: must be non-negative")
    if p.estimator_window < 1:
        errs.append("params.estimator_window: must be at least 1")
    if p.bound_variant not in VARIANTS:
        errs.append(f"params.bound_variant: must be one of {', '.join(VARIANTS)}")
    if p.mode not in MODES:
        errs.append(f"params.mode: must be one of {', '.join(MODES)}")
    if p.estimator not in ESTIMATORS:
        errs.append(f"params.estimator: must be one of {', '.join(ESTIMATORS)}")
    if p.packet_size > p.l_max:
        errs.append("params.packet_size_bytes: exceeds l_max_bytes")
    for f in flows:
        if f.sigma < p.packet_size:
            errs.append(f"flow {f.id}: sigma smaller than one packet")
    return errs


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError([f"cannot read scenario: {exc.strerror}"], str(p)) from None
    return parse_scenario(text, name=p.stem, path=str(p))


def shipped(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``shipped("fig2")``."""
    return Path(str(resources.files("tcpslice") / "scenarios" / f"{name}.scenario"))


def shipped_names() -> list[str]:
    folder = resources.files("tcpslice") / "scenarios"
    return sorted(p.name[: -len(".scenario")] for p in folder.iterdir() if p.name.endswith(".scenario"))


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def dump_scenario(sc: Scenario) -> str:
    """Serialize with every key explicit; ``parse_scenario`` inverts it."""
    p = sc.params
    out = ["[network]", "vertices = " + " ".join(sc.network.vertices)]
    for e in sc.network.edges:
        tail = "" if e.packetized else " fluid"
        out.append(f"edge.{e.id} = {e.src} {e.dst} {_fmt(e.capacity)} {_fmt(e.prop_delay)}{tail}")
    for f in sc.flows:
        out += [
            "",
            f"[flow.{f.id}]",
            f"source = {f.source}",
            f"destination = {f.destination}",
            "path = " + " ".join(f.path),
            f"rate_min_bps = {_fmt(f.rate_min)}",
            f"rate_max_bps = {_fmt(f.rate_max)}",
            f"delay_target_s = {_fmt(f.delay_target)}",
            f"utility_weight = {_fmt(f.utility_weight)}",
            f"sigma_bytes = {_fmt(f.sigma / 8)}",
        ]
    out += ["", "[schedule]"]
    out += [f"{f.id} = {_fmt(f.join_time)} {_fmt(f.leave_time)}" for f in sc.flows]
    out += [
        "",
        "[params]",
        f"gamma_e = {_fmt(p.gamma_e)}",
        f"gamma_j = {_fmt(p.gamma_j)}",
        f"update_interval_s = {_fmt(p.update_interval)}",
        f"bound_variant = {p.bound_variant}",
        f"estimator = {p.estimator}",
        f"estimator_window = {p.estimator_window}",
        f"mode = {p.mode}",
        f"packet_size_bytes = {_fmt(p.packet_size / 8)}",
        f"l_max_bytes = {_fmt(p.l_max / 8)}",
        f"cs_threshold = {_fmt(p.cs_threshold)}",
        f"control_delay_s = {_fmt(p.control_delay)}",
        f"audit_horizon_s = {_fmt(p.audit_horizon)}",
        f"duration_s = {_fmt(p.duration)}",
        f"seed = {p.seed}",
    ]
    return "\n".join(out) + "\n"
