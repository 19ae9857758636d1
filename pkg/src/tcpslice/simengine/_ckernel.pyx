# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled packet event loop.

Mirrors ``_kernel.PacketKernel`` operation for operation: same arithmetic
order, same (time, seq) event order, same consumption of the random
stream. Traces from the two backends are identical.
"""

import numpy as np

from libc.stdlib cimport free, malloc, realloc

DEF SEND = 0
DEF TXDONE = 1
DEF ARRIVE = 2
DEF DELIVER = 3
DEF ACK = 4

DEF RNG_BLOCK = 4096
DEF TOKEN_SLACK = 1e-6


cdef struct Event:
    double t
    long long seq
    int kind
    int a
    long long b


cdef inline bint _before(Event* x, Event* y) nogil:
    return x.t < y.t or (x.t == y.t and x.seq < y.seq)


cdef void* _grow(void* ptr, Py_ssize_t n, size_t item) except NULL:
    cdef void* out = realloc(ptr, n * item)
    if out == NULL:
        raise MemoryError()
    return out


cdef class PacketKernel:
    cdef public str backend
    cdef readonly int n_flows, n_links
    cdef readonly double now, size

    cdef Event* heap
    cdef Py_ssize_t heap_n, heap_cap
    cdef long long seq

    cdef object rng
    cdef double[::1] ubuf
    cdef Py_ssize_t ui

    # per flow
    cdef int** paths
    cdef int* path_len
    cdef double* sigma
    cdef double* ack_delay
    cdef double* rate
    cdef double* tokens
    cdef double* tok_time
    cdef long long* gen
    cdef char* active
    cdef long long* emitted_c
    cdef long long* delivered_c
    cdef long long* in_flight_c

    # per link
    cdef double* capacities
    cdef double* prop
    cdef double* tx
    cdef char* busy
    cdef double* queue_bits_c
    cdef int** qbuf
    cdef Py_ssize_t* qhead
    cdef Py_ssize_t* qlen
    cdef Py_ssize_t* qcap

    cdef double* mark

    # packet pool
    cdef int* pk_flow
    cdef double* pk_created
    cdef char* pk_marked
    cdef int* pk_hop
    cdef Py_ssize_t pk_n, pk_cap
    cdef int* free_ids
    cdef Py_ssize_t free_n

    # interval counters
    cdef double* c_arr_bits
    cdef double* c_dep_bits
    cdef long long* c_dlv_count
    cdef double* c_dlv_sum
    cdef double* c_dlv_max
    cdef long long* c_ack_total
    cdef long long* c_ack_marked

    cdef public object departures

    def __cinit__(self, paths, capacities, prop_delays, ack_delays, sigma, packet_bits, seed,
                  record_departures=False):
        cdef int F = len(paths)
        cdef int L = len(capacities)
        cdef int f, l, i
        self.backend = "cython"
        self.n_flows = F
        self.n_links = L
        self.size = float(packet_bits)
        self.now = 0.0
        self.seq = 0

        self.paths = <int**> malloc(max(F, 1) * sizeof(int*))
        self.path_len = <int*> malloc(max(F, 1) * sizeof(int))
        self.sigma = <double*> malloc(max(F, 1) * sizeof(double))
        self.ack_delay = <double*> malloc(max(F, 1) * sizeof(double))
        self.rate = <double*> malloc(max(F, 1) * sizeof(double))
        self.tokens = <double*> malloc(max(F, 1) * sizeof(double))
        self.tok_time = <double*> malloc(max(F, 1) * sizeof(double))
        self.gen = <long long*> malloc(max(F, 1) * sizeof(long long))
        self.active = <char*> malloc(max(F, 1) * sizeof(char))
        self.emitted_c = <long long*> malloc(max(F, 1) * sizeof(long long))
        self.delivered_c = <long long*> malloc(max(F, 1) * sizeof(long long))
        self.in_flight_c = <long long*> malloc(max(F, 1) * sizeof(long long))
        for f in range(F):
            p = list(paths[f])
            self.path_len[f] = len(p)
            self.paths[f] = <int*> malloc(max(len(p), 1) * sizeof(int))
            for i in range(len(p)):
                self.paths[f][i] = p[i]
            self.sigma[f] = float(sigma[f])
            self.ack_delay[f] = float(ack_delays[f])
            self.rate[f] = 0.0
            self.tokens[f] = 0.0
            self.tok_time[f] = 0.0
            self.gen[f] = 0
            self.active[f] = 0
            self.emitted_c[f] = 0
            self.delivered_c[f] = 0
            self.in_flight_c[f] = 0

        self.capacities = <double*> malloc(max(L, 1) * sizeof(double))
        self.prop = <double*> malloc(max(L, 1) * sizeof(double))
        self.tx = <double*> malloc(max(L, 1) * sizeof(double))
        self.busy = <char*> malloc(max(L, 1) * sizeof(char))
        self.queue_bits_c = <double*> malloc(max(L, 1) * sizeof(double))
        self.qbuf = <int**> malloc(max(L, 1) * sizeof(int*))
        self.qhead = <Py_ssize_t*> malloc(max(L, 1) * sizeof(Py_ssize_t))
        self.qlen = <Py_ssize_t*> malloc(max(L, 1) * sizeof(Py_ssize_t))
        self.qcap = <Py_ssize_t*> malloc(max(L, 1) * sizeof(Py_ssize_t))
        for l in range(L):
            self.capacities[l] = float(capacities[l])
            self.prop[l] = float(prop_delays[l])
            self.tx[l] = self.size / self.capacities[l]
            self.busy[l] = 0
            self.queue_bits_c[l] = 0.0
            self.qcap[l] = 64
            self.qbuf[l] = <int*> malloc(64 * sizeof(int))
            self.qhead[l] = 0
            self.qlen[l] = 0

        self.mark = <double*> malloc(max(L * F, 1) * sizeof(double))
        for i in range(L * F):
            self.mark[i] = 0.0

        self.heap_cap = 64
        self.heap_n = 0
        self.heap = <Event*> malloc(self.heap_cap * sizeof(Event))

        self.pk_cap = 64
        self.pk_n = 0
        self.pk_flow = <int*> malloc(self.pk_cap * sizeof(int))
        self.pk_created = <double*> malloc(self.pk_cap * sizeof(double))
        self.pk_marked = <char*> malloc(self.pk_cap * sizeof(char))
        self.pk_hop = <int*> malloc(self.pk_cap * sizeof(int))
        self.free_ids = <int*> malloc(self.pk_cap * sizeof(int))
        self.free_n = 0

        self.c_arr_bits = <double*> malloc(max(L * F, 1) * sizeof(double))
        self.c_dep_bits = <double*> malloc(max(L, 1) * sizeof(double))
        self.c_dlv_count = <long long*> malloc(max(F, 1) * sizeof(long long))
        self.c_dlv_sum = <double*> malloc(max(F, 1) * sizeof(double))
        self.c_dlv_max = <double*> malloc(max(F, 1) * sizeof(double))
        self.c_ack_total = <long long*> malloc(max(F, 1) * sizeof(long long))
        self.c_ack_marked = <long long*> malloc(max(F, 1) * sizeof(long long))
        self._reset_counters()

        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.ubuf = np.empty(0)
        self.ui = 0
        self.departures = [] if record_departures else None

    def __dealloc__(self):
        cdef int f, l
        if self.paths != NULL:
            for f in range(self.n_flows):
                free(self.paths[f])
        if self.qbuf != NULL:
            for l in range(self.n_links):
                free(self.qbuf[l])
        for ptr in (<size_t> self.paths, <size_t> self.path_len, <size_t> self.sigma, <size_t> self.ack_delay,
                    <size_t> self.rate, <size_t> self.tokens, <size_t> self.tok_time, <size_t> self.gen,
                    <size_t> self.active, <size_t> self.emitted_c, <size_t> self.delivered_c,
                    <size_t> self.in_flight_c, <size_t> self.capacities, <size_t> self.prop, <size_t> self.tx,
                    <size_t> self.busy, <size_t> self.queue_bits_c, <size_t> self.qbuf, <size_t> self.qhead,
                    <size_t> self.qlen, <size_t> self.qcap, <size_t> self.mark, <size_t> self.heap,
                    <size_t> self.pk_flow, <size_t> self.pk_created, <size_t> self.pk_marked,
                    <size_t> self.pk_hop, <size_t> self.free_ids, <size_t> self.c_arr_bits,
                    <size_t> self.c_dep_bits, <size_t> self.c_dlv_count, <size_t> self.c_dlv_sum,
                    <size_t> self.c_dlv_max, <size_t> self.c_ack_total, <size_t> self.c_ack_marked):
            free(<void*> ptr)

    # -- control surface -------------------------------------------------

    def activate(self, int f, rate, double t):
        self.active[f] = 1
        self.tokens[f] = self.sigma[f]
        self.tok_time[f] = t
        self.rate[f] = float(rate)
        self.gen[f] += 1
        self._push(t, SEND, f, self.gen[f])

    def deactivate(self, int f, double t):
        self._refill(f, t)
        self.active[f] = 0
        self.gen[f] += 1

    def set_rate(self, int f, rate, double t):
        cdef double need
        if not self.active[f]:
            self.rate[f] = float(rate)
            return
        self._refill(f, t)
        self.rate[f] = float(rate)
        self.gen[f] += 1
        need = self.size - self.tokens[f]
        self._push(t + need / self.rate[f] if need > 0 else t, SEND, f, self.gen[f])

    def set_marking(self, int link, int f, double prob):
        self.mark[link * self.n_flows + f] = prob

    def take_counters(self):
        cdef int F = self.n_flows, L = self.n_links
        cdef int i
        out = (
            [self.c_arr_bits[i] for i in range(L * F)],
            [self.c_dep_bits[i] for i in range(L)],
            [self.c_dlv_count[i] for i in range(F)],
            [self.c_dlv_sum[i] for i in range(F)],
            [self.c_dlv_max[i] for i in range(F)],
            [self.c_ack_total[i] for i in range(F)],
            [self.c_ack_marked[i] for i in range(F)],
            [self.queue_bits_c[i] for i in range(L)],
        )
        self._reset_counters()
        return out

    @property
    def emitted(self):
        return [self.emitted_c[i] for i in range(self.n_flows)]

    @property
    def delivered(self):
        return [self.delivered_c[i] for i in range(self.n_flows)]

    @property
    def in_flight(self):
        return [self.in_flight_c[i] for i in range(self.n_flows)]

    @property
    def queue_bits(self):
        return [self.queue_bits_c[i] for i in range(self.n_links)]

    def queue_lengths(self):
        return [self.qlen[i] for i in range(self.n_links)]

    def pending_events(self):
        return self.heap_n

    def idle_links_have_empty_queues(self):
        cdef int l
        for l in range(self.n_links):
            if not self.busy[l] and self.qlen[l]:
                return False
        return True

    # -- internals ---------------------------------------------------------

    cdef void _reset_counters(self):
        cdef int i
        for i in range(self.n_links * self.n_flows):
            self.c_arr_bits[i] = 0.0
        for i in range(self.n_links):
            self.c_dep_bits[i] = 0.0
        for i in range(self.n_flows):
            self.c_dlv_count[i] = 0
            self.c_dlv_sum[i] = 0.0
            self.c_dlv_max[i] = 0.0
            self.c_ack_total[i] = 0
            self.c_ack_marked[i] = 0

    cdef int _push(self, double t, int kind, int a, long long b) except -1:
        cdef Py_ssize_t i, parent
        cdef Event ev
        if self.heap_n == self.heap_cap:
            self.heap_cap *= 2
            self.heap = <Event*> _grow(self.heap, self.heap_cap, sizeof(Event))
        self.seq += 1
        ev.t = t
        ev.seq = self.seq
        ev.kind = kind
        ev.a = a
        ev.b = b
        i = self.heap_n
        self.heap_n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if _before(&ev, &self.heap[parent]):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = ev
        return 0

    cdef Event _pop(self):
        cdef Event top = self.heap[0]
        cdef Event last
        cdef Py_ssize_t i = 0, child, n
        self.heap_n -= 1
        n = self.heap_n
        if n > 0:
            last = self.heap[n]
            while True:
                child = 2 * i + 1
                if child >= n:
                    break
                if child + 1 < n and _before(&self.heap[child + 1], &self.heap[child]):
                    child += 1
                if _before(&self.heap[child], &last):
                    self.heap[i] = self.heap[child]
                    i = child
                else:
                    break
            self.heap[i] = last
        return top

    cdef double _uniform(self) except -1.0:
        if self.ui >= self.ubuf.shape[0]:
            self.ubuf = self.rng.random(RNG_BLOCK)
            self.ui = 0
        cdef double u = self.ubuf[self.ui]
        self.ui += 1
        return u

    cdef inline void _refill(self, int f, double t):
        cdef double tk = self.tokens[f] + self.rate[f] * (t - self.tok_time[f])
        if tk > self.sigma[f]:
            tk = self.sigma[f]
        self.tokens[f] = tk
        self.tok_time[f] = t

    cdef int _enqueue(self, int link, int pid) except -1:
        cdef Py_ssize_t cap = self.qcap[link], k, n = self.qlen[link]
        cdef int* buf
        if n == cap:
            buf = <int*> malloc(2 * cap * sizeof(int))
            if buf == NULL:
                raise MemoryError()
            for k in range(n):
                buf[k] = self.qbuf[link][(self.qhead[link] + k) % cap]
            free(self.qbuf[link])
            self.qbuf[link] = buf
            self.qhead[link] = 0
            self.qcap[link] = 2 * cap
            cap = 2 * cap
        self.qbuf[link][(self.qhead[link] + n) % cap] = pid
        self.qlen[link] = n + 1
        return 0

    cdef int _dequeue(self, int link):
        cdef int pid = self.qbuf[link][self.qhead[link]]
        self.qhead[link] = (self.qhead[link] + 1) % self.qcap[link]
        self.qlen[link] -= 1
        return pid

    cdef int _arrive(self, int link, int pid, double t) except -1:
        cdef int f = self.pk_flow[pid]
        if self._uniform() < self.mark[link * self.n_flows + f]:
            self.pk_marked[pid] = 1
        self.c_arr_bits[link * self.n_flows + f] += self.size
        if self.busy[link]:
            self._enqueue(link, pid)
            self.queue_bits_c[link] += self.size
        else:
            self.busy[link] = 1
            self._push(t + self.tx[link], TXDONE, link, pid)
        return 0

    cdef int _deliver(self, int pid, double t) except -1:
        cdef int f = self.pk_flow[pid]
        cdef double d = t - self.pk_created[pid]
        cdef int m
        self.c_dlv_count[f] += 1
        self.c_dlv_sum[f] += d
        if d > self.c_dlv_max[f]:
            self.c_dlv_max[f] = d
        self.delivered_c[f] += 1
        self.in_flight_c[f] -= 1
        m = self.pk_marked[pid]
        self.free_ids[self.free_n] = pid
        self.free_n += 1
        if self.ack_delay[f] > 0:
            self._push(t + self.ack_delay[f], ACK, f, m)
        else:
            self.c_ack_total[f] += 1
            self.c_ack_marked[f] += m
        return 0

    cdef int _new_packet(self, int f, double t) except -1:
        cdef int pid
        if self.free_n > 0:
            self.free_n -= 1
            pid = self.free_ids[self.free_n]
        else:
            if self.pk_n == self.pk_cap:
                self.pk_cap *= 2
                self.pk_flow = <int*> _grow(self.pk_flow, self.pk_cap, sizeof(int))
                self.pk_created = <double*> _grow(self.pk_created, self.pk_cap, sizeof(double))
                self.pk_marked = <char*> _grow(self.pk_marked, self.pk_cap, sizeof(char))
                self.pk_hop = <int*> _grow(self.pk_hop, self.pk_cap, sizeof(int))
                self.free_ids = <int*> _grow(self.free_ids, self.pk_cap, sizeof(int))
            pid = <int> self.pk_n
            self.pk_n += 1
        self.pk_flow[pid] = f
        self.pk_created[pid] = t
        self.pk_marked[pid] = 0
        self.pk_hop[pid] = 0
        return pid

    cdef int _send(self, int f, long long gen, double t) except -1:
        cdef double size = self.size, tk, need
        cdef int pid
        if gen != self.gen[f]:
            return 0
        self._refill(f, t)
        # a shortfall too small to advance the clock counts as paid
        if self.tokens[f] >= size - TOKEN_SLACK or t + (size - self.tokens[f]) / self.rate[f] <= t:
            tk = self.tokens[f] - size
            self.tokens[f] = tk if tk > 0 else 0.0
            pid = self._new_packet(f, t)
            self.emitted_c[f] += 1
            self.in_flight_c[f] += 1
            self._arrive(self.paths[f][0], pid, t)
        need = size - self.tokens[f]
        self._push(t + need / self.rate[f] if need > 0 else t, SEND, f, gen)
        return 0

    cdef int _txdone(self, int link, int pid, double t) except -1:
        cdef double size = self.size, pd
        cdef int f = self.pk_flow[pid]
        cdef int hop, nxt
        self.c_dep_bits[link] += size
        if self.departures is not None:
            self.departures.append((t, link, f))
        hop = self.pk_hop[pid] + 1
        self.pk_hop[pid] = hop
        pd = self.prop[link]
        if hop < self.path_len[f]:
            if pd > 0:
                self._push(t + pd, ARRIVE, self.paths[f][hop], pid)
            else:
                self._arrive(self.paths[f][hop], pid, t)
        elif pd > 0:
            self._push(t + pd, DELIVER, 0, pid)
        else:
            self._deliver(pid, t)
        if self.qlen[link]:
            nxt = self._dequeue(link)
            self.queue_bits_c[link] -= size
            self._push(t + self.tx[link], TXDONE, link, nxt)
        else:
            self.busy[link] = 0
        return 0

    def run_until(self, double t_end):
        """Process every event strictly before ``t_end``."""
        cdef Event ev
        while self.heap_n > 0 and self.heap[0].t < t_end:
            ev = self._pop()
            if ev.kind == SEND:
                self._send(ev.a, ev.b, ev.t)
            elif ev.kind == TXDONE:
                self._txdone(ev.a, <int> ev.b, ev.t)
            elif ev.kind == ARRIVE:
                self._arrive(ev.a, <int> ev.b, ev.t)
            elif ev.kind == DELIVER:
                self._deliver(<int> ev.b, ev.t)
            else:
                self.c_ack_total[ev.a] += 1
                self.c_ack_marked[ev.a] += ev.b
        self.now = t_end
