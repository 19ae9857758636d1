"""Pure-Python packet event loop.

Flows and links are dense integer indices. Hosts are greedy token-bucket
senders, links are store-and-forward FIFO servers that ECN-mark arriving
packets with a per-(link, flow) probability. All randomness comes from one
seeded stream consumed in event order.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

SEND, TXDONE, ARRIVE, DELIVER, ACK = range(5)

_RNG_BLOCK = 4096
_TOKEN_SLACK = 1e-6  # bits


class PacketKernel:
    backend = "python"

    def __init__(
        self,
        paths,
        capacities,
        prop_delays,
        ack_delays,
        sigma,
        packet_bits,
        seed,
        record_departures=False,
    ):
        self.n_flows = F = len(paths)
        self.n_links = L = len(capacities)
        self.paths = [list(p) for p in paths]
        self.capacities = [float(c) for c in capacities]
        self.prop = [float(p) for p in prop_delays]
        self.ack_delay = [float(a) for a in ack_delays]
        self.sigma = [float(s) for s in sigma]
        self.size = float(packet_bits)
        self.tx = [self.size / c for c in self.capacities]
        self.now = 0.0

        self._heap = []
        self._seq = 0
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._u = []
        self._ui = 0

        self.rate = [0.0] * F
        self.tokens = [0.0] * F
        self.tok_time = [0.0] * F
        self.gen = [0] * F
        self.active = [False] * F
        self.mark = [0.0] * (L * F)

        self.pk_flow = []
        self.pk_created = []
        self.pk_marked = []
        self.pk_hop = []
        self._free = []

        self.queues = [deque() for _ in range(L)]
        self.busy = [False] * L
        self.queue_bits = [0.0] * L

        self.emitted = [0] * F
        self.delivered = [0] * F
        self.in_flight = [0] * F
        self.departures = [] if record_departures else None
        self._reset_counters()

    # -- control surface -------------------------------------------------

    def activate(self, f, rate, t):
        self.active[f] = True
        self.tokens[f] = self.sigma[f]
        self.tok_time[f] = t
        self.rate[f] = float(rate)
        self.gen[f] += 1
        self._push(t, SEND, f, self.gen[f])

    def deactivate(self, f, t):
        self._refill(f, t)
        self.active[f] = False
        self.gen[f] += 1

    def set_rate(self, f, rate, t):
        if not self.active[f]:
            self.rate[f] = float(rate)
            return
        self._refill(f, t)
        self.rate[f] = float(rate)
        self.gen[f] += 1
        need = self.size - self.tokens[f]
        self._push(t + need / self.rate[f] if need > 0 else t, SEND, f, self.gen[f])

    def set_marking(self, link, f, prob):
        self.mark[link * self.n_flows + f] = float(prob)

    def take_counters(self):
        out = (
            self.c_arr_bits,
            self.c_dep_bits,
            self.c_dlv_count,
            self.c_dlv_sum,
            self.c_dlv_max,
            self.c_ack_total,
            self.c_ack_marked,
            list(self.queue_bits),
        )
        self._reset_counters()
        return out

    # -- internals ---------------------------------------------------------

    def _reset_counters(self):
        F, L = self.n_flows, self.n_links
        self.c_arr_bits = [0.0] * (L * F)
        self.c_dep_bits = [0.0] * L
        self.c_dlv_count = [0] * F
        self.c_dlv_sum = [0.0] * F
        self.c_dlv_max = [0.0] * F
        self.c_ack_total = [0] * F
        self.c_ack_marked = [0] * F

    def _push(self, t, kind, a, b):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, a, b))

    def _uniform(self):
        if self._ui >= len(self._u):
            self._u = self._rng.random(_RNG_BLOCK).tolist()
            self._ui = 0
        u = self._u[self._ui]
        self._ui += 1
        return u

    def _refill(self, f, t):
        tk = self.tokens[f] + self.rate[f] * (t - self.tok_time[f])
        if tk > self.sigma[f]:
            tk = self.sigma[f]
        self.tokens[f] = tk
        self.tok_time[f] = t

    def _arrive(self, link, pid, t):
        f = self.pk_flow[pid]
        if self._uniform() < self.mark[link * self.n_flows + f]:
            self.pk_marked[pid] = 1
        self.c_arr_bits[link * self.n_flows + f] += self.size
        if self.busy[link]:
            self.queues[link].append(pid)
            self.queue_bits[link] += self.size
        else:
            self.busy[link] = True
            self._push(t + self.tx[link], TXDONE, link, pid)

    def _deliver(self, pid, t):
        f = self.pk_flow[pid]
        d = t - self.pk_created[pid]
        self.c_dlv_count[f] += 1
        self.c_dlv_sum[f] += d
        if d > self.c_dlv_max[f]:
            self.c_dlv_max[f] = d
        self.delivered[f] += 1
        self.in_flight[f] -= 1
        m = self.pk_marked[pid]
        self._free.append(pid)
        if self.ack_delay[f] > 0:
            self._push(t + self.ack_delay[f], ACK, f, m)
        else:
            self.c_ack_total[f] += 1
            self.c_ack_marked[f] += m

    def _send(self, f, gen, t):
        if gen != self.gen[f]:
            return
        self._refill(f, t)
        size = self.size
        # a shortfall too small to advance the clock counts as paid
        if self.tokens[f] >= size - _TOKEN_SLACK or t + (size - self.tokens[f]) / self.rate[f] <= t:
            tk = self.tokens[f] - size
            self.tokens[f] = tk if tk > 0 else 0.0
            if self._free:
                pid = self._free.pop()
                self.pk_flow[pid] = f
                self.pk_created[pid] = t
                self.pk_marked[pid] = 0
                self.pk_hop[pid] = 0
            else:
                pid = len(self.pk_flow)
                self.pk_flow.append(f)
                self.pk_created.append(t)
                self.pk_marked.append(0)
                self.pk_hop.append(0)
            self.emitted[f] += 1
            self.in_flight[f] += 1
            self._arrive(self.paths[f][0], pid, t)
        need = size - self.tokens[f]
        self._push(t + need / self.rate[f] if need > 0 else t, SEND, f, gen)

    def _txdone(self, link, pid, t):
        size = self.size
        self.c_dep_bits[link] += size
        f = self.pk_flow[pid]
        if self.departures is not None:
            self.departures.append((t, link, f))
        hop = self.pk_hop[pid] + 1
        self.pk_hop[pid] = hop
        path = self.paths[f]
        pd = self.prop[link]
        if hop < len(path):
            if pd > 0:
                self._push(t + pd, ARRIVE, path[hop], pid)
            else:
                self._arrive(path[hop], pid, t)
        elif pd > 0:
            self._push(t + pd, DELIVER, 0, pid)
        else:
            self._deliver(pid, t)
        q = self.queues[link]
        if q:
            nxt = q.popleft()
            self.queue_bits[link] -= size
            self._push(t + self.tx[link], TXDONE, link, nxt)
        else:
            self.busy[link] = False

    def run_until(self, t_end):
        """Process every event strictly before ``t_end``."""
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] < t_end:
            t, _, kind, a, b = pop(heap)
            if kind == SEND:
                self._send(a, b, t)
            elif kind == TXDONE:
                self._txdone(a, b, t)
            elif kind == ARRIVE:
                self._arrive(a, b, t)
            elif kind == DELIVER:
                self._deliver(b, t)
            else:
                self.c_ack_total[a] += 1
                self.c_ack_marked[a] += b
        self.now = t_end

    def queue_lengths(self):
        return [len(q) for q in self.queues]

    def pending_events(self):
        return len(self._heap)

    def idle_links_have_empty_queues(self):
        return all(self.busy[l] or not self.queues[l] for l in range(self.n_links))
