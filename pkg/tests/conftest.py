import math

import pytest
from hypothesis import HealthCheck, settings

from tcpslice.topology import Edge, FlowSpec, Network

settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

PKT = 1518 * 8  # 12144 bits
PKT_T3 = 1512 * 8  # 12096 bits


def flow(fid, path, sigma=PKT, m=1e6, M=100e6, d=1e-3, a=1e5, source=None, dest=None, join=0.0, leave=math.inf):
    return FlowSpec(fid, source or "src", dest or "dst", tuple(path), sigma, m, M, d, a, join, leave)


@pytest.fixture
def fig2_net():
    return Network(
        ("sw1", "sw2", "sw3"),
        (Edge("e100", "sw1", "sw2", 100e6), Edge("e128", "sw2", "sw3", 128e6)),
    )


@pytest.fixture
def fig2_flows():
    return [
        FlowSpec("0", "sw1", "sw3", ("e100", "e128"), PKT, 1e6, 100e6, 1e-3),
        FlowSpec("1", "sw1", "sw3", ("e100", "e128"), PKT, 1e6, 100e6, 1e-3),
        FlowSpec("2", "sw2", "sw3", ("e128",), PKT, 1e6, 100e6, 1e-3),
    ]


@pytest.fixture
def one_link():
    return Network(("s", "r"), (Edge("link", "s", "r", 40e6),))


# -- acceptance report ---------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    entry = _CRITERIA.setdefault(number, {"title": title, "parts": []})
    entry["parts"].append((ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        ok = all(p[0] for p in entry["parts"])
        details = "; ".join(("" if p[0] else "FAILED ") + p[1] for p in entry["parts"])
        terminalreporter.write_line(f"criterion {n} ({entry['title']}): {'PASS' if ok else 'FAIL'} | {details}")
