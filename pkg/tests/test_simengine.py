import math

import numpy as np
import pytest

from conftest import PKT
from tcpslice.numopt import rate_for_price_sum
from tcpslice.scenario import load_scenario, parse_scenario, shipped
from tcpslice.simengine import Simulation, available_backends, get_kernel, run
from conftest import flow

BACKENDS = available_backends()

ONE_HOST = """
[network]
vertices = a b c
edge.e100 = a b 100e6
edge.e128 = b c 128e6
[flow.0]
source = a
destination = c
path = e100 e128
utility_weight = 5e7
[params]
gamma_e = 5e-10
gamma_j = 5e-11
estimator_window = 20
duration_s = {duration}
mode = {mode}
seed = 5
"""


def kernel(backend, paths, caps, sigma=None, seed=1, record=False, prop=None):
    K = get_kernel(backend)
    n = len(paths)
    return K(paths, caps, prop or [0.0] * len(caps), [0.0] * n, sigma or [PKT] * n, PKT, seed, record)


@pytest.mark.parametrize("backend", BACKENDS)
class TestKernel:
    def test_serialization_only_delay(self, backend):
        k = kernel(backend, [[0, 1]], [100e6, 128e6])
        k.activate(0, 1e6, 0.0)  # one packet every 12 ms: never queues
        k.run_until(0.1)
        c = k.take_counters()
        assert c[4][0] == pytest.approx(PKT / 100e6 + PKT / 128e6, rel=1e-12)
        assert c[4][0] == pytest.approx(2.163e-4, abs=1e-7)

    def test_conservation_and_work_conservation(self, backend):
        k = kernel(backend, [[0, 1], [1], [0]], [50e6, 60e6], prop=[1e-4, 0.0])
        for i, r in enumerate((40e6, 30e6, 20e6)):
            k.activate(i, r, 0.0)
        t = 0.0
        while t < 0.2:
            t += 0.0013
            k.run_until(t)
            for f in range(3):
                assert k.delivered[f] + k.in_flight[f] == k.emitted[f]
            assert sum(k.queue_lengths()) <= sum(k.in_flight)
            assert k.idle_links_have_empty_queues()

    def test_output_conformance(self, backend):
        rates = (45e6, 35e6, 20e6)
        k = kernel(backend, [[0, 1], [0, 1], [1]], [100e6, 128e6], sigma=[PKT, 2 * PKT, PKT], record=True)
        for i, r in enumerate(rates):
            k.activate(i, r, 0.0)
        k.run_until(0.3)
        sig = [PKT, 2 * PKT, PKT]
        for link in (0, 1):
            for f in range(3):
                ts = np.array([t for t, l, g in k.departures if l == link and g == f])
                if len(ts) < 2:
                    continue
                # worst window ending at each departure, starting at each earlier one
                n = np.arange(len(ts))
                for j in range(0, len(ts), 7):
                    bits = (j - n[: j + 1] + 1) * PKT
                    span = ts[j] - ts[: j + 1]
                    assert np.all(bits <= sig[f] + rates[f] * span + PKT + 1e-6)

    def test_marking(self, backend):
        k = kernel(backend, [[0], [0, 1]], [1e9, 1e9], seed=123)
        k.set_marking(0, 0, 0.0)
        k.set_marking(0, 1, 1.0)  # latched at the first hop
        k.set_marking(1, 1, 0.0)
        k.activate(0, 100e6, 0.0)
        k.activate(1, 100e6, 0.0)
        k.run_until(0.05)
        c = k.take_counters()
        assert c[6][0] == 0 and c[5][0] > 0
        assert c[6][1] == c[5][1] > 0

    def test_monte_carlo_mark_rate(self, backend):
        p = 1 - math.exp(-0.3144)
        k = kernel(backend, [[0]], [1e12], seed=7)
        k.set_marking(0, 0, p)
        k.activate(0, 1e10, 0.0)
        total = marked = 0
        t = 0.0
        while total < 100_000:
            t += 1e-5
            k.run_until(t)
            c = k.take_counters()
            total += c[5][0]
            marked += c[6][0]
        assert abs(marked / total - p) <= 0.005

    def test_rate_change_and_deactivate(self, backend):
        k = kernel(backend, [[0]], [100e6])
        k.activate(0, 10e6, 0.0)
        k.run_until(0.1)
        k.set_rate(0, 50e6, 0.1)
        k.run_until(0.2)
        sent = k.emitted[0]
        assert sent == pytest.approx((10e6 * 0.1 + 50e6 * 0.1) / PKT, abs=3)
        k.deactivate(0, 0.2)
        k.run_until(0.3)
        assert k.emitted[0] == sent and k.in_flight[0] == 0


def test_backends_identical():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernel not built")
    sc = parse_scenario(ONE_HOST.format(duration=2, mode="reactive"))
    a, b = run(sc, "python"), run(sc, "cython")
    assert a.flows == b.flows and a.edges == b.edges and a.audit == b.audit


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_kernel("fortran")


def test_zero_flow_scenario():
    sc = parse_scenario("[network]\nvertices = a b\nedge.l = a b 1e6\n[params]\nduration_s = 0.1\n")
    tr = run(sc)
    assert tr.flows == [] and len(tr.edges) == 20
    assert all(r[2] == 0.0 for r in tr.edges)


def test_lone_host_reaches_full_rate():
    tr = run(parse_scenario(ONE_HOST.format(duration=10, mode="reactive")))
    late = [r[2] for r in tr.flows if r[0] > 8]
    assert np.mean(late) == pytest.approx(100e6, rel=0.02)
    # starts at m_s before any feedback
    assert tr.flows[0][2] == pytest.approx(1e6)


def test_proactive_join_into_empty_network_starts_at_max():
    tr = run(parse_scenario(ONE_HOST.format(duration=0.05, mode="proactive")))
    assert tr.flows[0][2] == pytest.approx(100e6)
    assert all(p == 0.0 for _, _, p in tr.source_prices)


def test_same_seed_same_trace():
    sc = load_scenario(shipped("table3")).with_overrides(duration=1.0)
    assert run(sc).flows == run(sc).flows


def test_idle_network_prices_decay():
    sc = parse_scenario(ONE_HOST.format(duration=0.2, mode="reactive"))
    sim = Simulation(sc)
    sim.ctrl.edge_prices["e100"] = 1.0
    tr = sim.run()
    # host 0 sends at m_s for the first tick: far below capacity, price falls
    first = [r for r in tr.edges if r[1] == "e100"]
    assert first[0][2] < 1.0 and first[1][2] < first[0][2]


def test_ack_feedback_rate_rule():
    f = flow("s", ["a"])
    assert rate_for_price_sum(0.0, f) == 100e6
    assert rate_for_price_sum(-math.log(1 - 0.4668), f) == 1e6


def test_control_delay_defers_marking():
    sc = parse_scenario(ONE_HOST.format(duration=0.5, mode="reactive")).with_overrides(control_delay=0.01)
    tr = run(sc)
    assert len(tr.flows) == 100
