"""Compare the pure-Python and compiled packet kernels.

Two measurements per backend: the bare event loop driving a fixed
three-flow load (no controller), and a full simulation of a shipped
scenario. Also checks that both backends produced the same trace.

    python3 benchmarks/bench_kernel.py [--seconds 5] [--scenario fig2] [--duration 40]
"""

import argparse
import time

from tcpslice.scenario import load_scenario, shipped
from tcpslice.simengine import Simulation, available_backends, get_kernel


def bare_loop(backend: str, seconds: float) -> tuple[float, int]:
    kernel = get_kernel(backend)(
        paths=[[0, 1], [0, 1], [1]],
        capacities=[100e6, 128e6],
        prop_delays=[0.0, 0.0],
        ack_delays=[0.0, 0.0, 0.0],
        sigma=[12144.0] * 3,
        packet_bits=12144.0,
        seed=1,
    )
    for f, rate in enumerate((40e6, 40e6, 40e6)):
        kernel.activate(f, rate, 0.0)
        for link in ([0, 1], [0, 1], [1])[f]:
            kernel.set_marking(link, f, 0.3)
    start = time.perf_counter()
    step = 0.005
    t = 0.0
    while t < seconds:
        t += step
        kernel.run_until(t)
        kernel.take_counters()
    return time.perf_counter() - start, sum(kernel.delivered)


def full_run(backend: str, name: str, duration: float):
    sc = load_scenario(shipped(name)).with_overrides(duration=duration)
    start = time.perf_counter()
    trace = Simulation(sc, backend).run()
    return time.perf_counter() - start, trace


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=5.0, help="simulated seconds for the bare loop")
    ap.add_argument("--scenario", default="fig2")
    ap.add_argument("--duration", type=float, default=40.0, help="simulated seconds for the full run")
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the Python kernel is measured")
    results = {}
    print(f"{'backend':<8} {'bare s':>8} {'pkt/s':>12} {'full s':>8}")
    for b in backends:
        bare, pkts = bare_loop(b, args.seconds)
        full, trace = full_run(b, args.scenario, args.duration)
        results[b] = (bare, full, trace)
        print(f"{b:<8} {bare:8.2f} {pkts / bare:12.0f} {full:8.2f}")
    if len(results) == 2:
        (pb, pf, pt), (cb, cf, ct) = results["python"], results["cython"]
        same = (pt.flows, pt.edges, pt.audit) == (ct.flows, ct.edges, ct.audit)
        print(f"speedup: bare loop {pb / cb:.1f}x, full run {pf / cf:.1f}x; traces identical: {same}")


if __name__ == "__main__":
    main()
