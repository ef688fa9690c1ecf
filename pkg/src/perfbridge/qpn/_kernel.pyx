# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled station kernel.  Mirrors ``_kernel_py.run_stations`` operation by
operation; see that module for the parameter description."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free
from libc.math cimport NAN, INFINITY

cnp.import_array()


cdef struct Event:
    double t
    long long seq
    int s
    long long x


cdef struct Heap:
    Event* data
    Py_ssize_t size
    Py_ssize_t cap


cdef inline bint _less(Event* a, Event* b) noexcept nogil:
    if a.t < b.t:
        return True
    if a.t > b.t:
        return False
    return a.seq < b.seq


cdef int _push(Heap* h, double t, long long seq, int s, long long x) noexcept nogil:
    cdef Event* grown
    cdef Py_ssize_t i, parent
    cdef Event item
    if h.size == h.cap:
        grown = <Event*> realloc(h.data, 2 * h.cap * sizeof(Event))
        if grown == NULL:
            return -1
        h.data = grown
        h.cap = 2 * h.cap
    item.t = t
    item.seq = seq
    item.s = s
    item.x = x
    i = h.size
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(&item, &h.data[parent]):
            h.data[i] = h.data[parent]
            i = parent
        else:
            break
    h.data[i] = item
    return 0


cdef Event _pop(Heap* h) noexcept nogil:
    cdef Event top = h.data[0]
    cdef Event last
    cdef Py_ssize_t i, child, n
    h.size -= 1
    n = h.size
    if n > 0:
        last = h.data[n]
        i = 0
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            if child + 1 < n and _less(&h.data[child + 1], &h.data[child]):
                child += 1
            if _less(&h.data[child], &last):
                h.data[i] = h.data[child]
                i = child
            else:
                break
        h.data[i] = last
    return top


def run_stations(arrival, ptr, station, work, servers, is_ps, double warmup, double horizon):
    cdef double[::1] arr_v = np.ascontiguousarray(arrival, dtype=np.float64)
    cdef long long[::1] ptr_v = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef int[::1] st_v = np.ascontiguousarray(station, dtype=np.int32)
    cdef double[::1] work_v = np.ascontiguousarray(work, dtype=np.float64)
    cdef int[::1] srv_v = np.ascontiguousarray(servers, dtype=np.int32)
    cdef signed char[::1] ps_v = np.ascontiguousarray(is_ps, dtype=np.int8)

    cdef Py_ssize_t n = arr_v.shape[0]
    cdef Py_ssize_t S = srv_v.shape[0]

    completion_a = np.full(n, np.nan, dtype=np.float64)
    busy_a = np.zeros(S, dtype=np.float64)
    cdef double[::1] completion = completion_a
    cdef double[::1] busy_area = busy_a

    cdef long long[::1] pos = np.array(np.asarray(ptr_v)[:n], dtype=np.int64)
    cdef long long[::1] count = np.zeros(S, dtype=np.int64)
    cdef double[::1] st_last = np.zeros(S, dtype=np.float64)
    cdef long long[::1] q_head = np.full(S, -1, dtype=np.int64)
    cdef long long[::1] q_tail = np.full(S, -1, dtype=np.int64)
    cdef long long[::1] q_next = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] ps_head = np.full(S, -1, dtype=np.int64)
    cdef long long[::1] ps_tail = np.full(S, -1, dtype=np.int64)
    cdef long long[::1] ps_next = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] ps_prev = np.full(n, -1, dtype=np.int64)
    cdef double[::1] ps_last = np.zeros(S, dtype=np.float64)
    cdef long long[::1] version = np.zeros(S, dtype=np.int64)
    cdef double[::1] rem = np.zeros(n, dtype=np.float64)

    cdef Heap heap
    heap.cap = 64
    heap.size = 0
    heap.data = <Event*> malloc(heap.cap * sizeof(Event))
    if heap.data == NULL:
        raise MemoryError()

    cdef long long seq = 0
    cdef long long nsys = 0
    cdef double sys_last = 0.0
    cdef double system_area = 0.0
    cdef Py_ssize_t i_arr = 0
    cdef double ht, at, t, lo, hi, dt, rate, step, m
    cdef long long r, j, q, x, v, c
    cdef int s, k
    cdef Event ev
    cdef bint from_heap, failed = False

    with nogil:
        while True:
            ht = heap.data[0].t if heap.size > 0 else INFINITY
            at = arr_v[i_arr] if i_arr < n else INFINITY
            from_heap = ht <= at
            t = ht if from_heap else at
            if t > horizon or t == INFINITY:
                break
            if from_heap:
                ev = _pop(&heap)
                s = ev.s
                x = ev.x
                if ps_v[s]:
                    if x != version[s]:
                        continue
                    # acc_station
                    lo = st_last[s] if st_last[s] > warmup else warmup
                    hi = t if t < horizon else horizon
                    if hi > lo:
                        c = count[s]
                        busy_area[s] += (c if c < srv_v[s] else srv_v[s]) * (hi - lo)
                    st_last[s] = t
                    # ps_advance
                    dt = t - ps_last[s]
                    c = count[s]
                    if c > 0 and dt > 0.0:
                        rate = (<double> srv_v[s]) / c if c > srv_v[s] else 1.0
                        step = rate * dt
                        j = ps_head[s]
                        while j != -1:
                            rem[j] -= step
                            j = ps_next[j]
                    ps_last[s] = t
                    j = ps_head[s]
                    r = j
                    m = rem[j]
                    j = ps_next[j]
                    while j != -1:
                        if rem[j] < m:
                            m = rem[j]
                            r = j
                        j = ps_next[j]
                    if ps_prev[r] == -1:
                        ps_head[s] = ps_next[r]
                    else:
                        ps_next[ps_prev[r]] = ps_next[r]
                    if ps_next[r] == -1:
                        ps_tail[s] = ps_prev[r]
                    else:
                        ps_prev[ps_next[r]] = ps_prev[r]
                    count[s] -= 1
                    # ps_schedule
                    version[s] += 1
                    c = count[s]
                    if c > 0:
                        j = ps_head[s]
                        m = rem[j]
                        j = ps_next[j]
                        while j != -1:
                            if rem[j] < m:
                                m = rem[j]
                            j = ps_next[j]
                        if m < 0.0:
                            m = 0.0
                        rate = (<double> srv_v[s]) / c if c > srv_v[s] else 1.0
                        if _push(&heap, t + m / rate, seq, s, version[s]) < 0:
                            failed = True
                            break
                        seq += 1
                else:
                    r = x
                    lo = st_last[s] if st_last[s] > warmup else warmup
                    hi = t if t < horizon else horizon
                    if hi > lo:
                        c = count[s]
                        busy_area[s] += (c if c < srv_v[s] else srv_v[s]) * (hi - lo)
                    st_last[s] = t
                    count[s] -= 1
                    q = q_head[s]
                    if q != -1:
                        q_head[s] = q_next[q]
                        if q_head[s] == -1:
                            q_tail[s] = -1
                        if _push(&heap, t + work_v[pos[q]], seq, s, q) < 0:
                            failed = True
                            break
                        seq += 1
                pos[r] += 1
            else:
                r = i_arr
                i_arr += 1
                lo = sys_last if sys_last > warmup else warmup
                hi = t if t < horizon else horizon
                if hi > lo:
                    system_area += nsys * (hi - lo)
                sys_last = t
                nsys += 1

            # enter(r, t)
            if pos[r] == ptr_v[r + 1]:
                lo = sys_last if sys_last > warmup else warmup
                hi = t if t < horizon else horizon
                if hi > lo:
                    system_area += nsys * (hi - lo)
                sys_last = t
                nsys -= 1
                completion[r] = t
                continue
            v = pos[r]
            s = st_v[v]
            lo = st_last[s] if st_last[s] > warmup else warmup
            hi = t if t < horizon else horizon
            if hi > lo:
                c = count[s]
                busy_area[s] += (c if c < srv_v[s] else srv_v[s]) * (hi - lo)
            st_last[s] = t
            if ps_v[s]:
                dt = t - ps_last[s]
                c = count[s]
                if c > 0 and dt > 0.0:
                    rate = (<double> srv_v[s]) / c if c > srv_v[s] else 1.0
                    step = rate * dt
                    j = ps_head[s]
                    while j != -1:
                        rem[j] -= step
                        j = ps_next[j]
                ps_last[s] = t
                rem[r] = work_v[v]
                ps_prev[r] = ps_tail[s]
                ps_next[r] = -1
                if ps_tail[s] == -1:
                    ps_head[s] = r
                else:
                    ps_next[ps_tail[s]] = r
                ps_tail[s] = r
                count[s] += 1
                version[s] += 1
                c = count[s]
                j = ps_head[s]
                m = rem[j]
                j = ps_next[j]
                while j != -1:
                    if rem[j] < m:
                        m = rem[j]
                    j = ps_next[j]
                if m < 0.0:
                    m = 0.0
                rate = (<double> srv_v[s]) / c if c > srv_v[s] else 1.0
                if _push(&heap, t + m / rate, seq, s, version[s]) < 0:
                    failed = True
                    break
                seq += 1
            else:
                count[s] += 1
                if count[s] <= srv_v[s]:
                    if _push(&heap, t + work_v[v], seq, s, r) < 0:
                        failed = True
                        break
                    seq += 1
                else:
                    q_next[r] = -1
                    if q_tail[s] == -1:
                        q_head[s] = r
                    else:
                        q_next[q_tail[s]] = r
                    q_tail[s] = r

        for k in range(S):
            lo = st_last[k] if st_last[k] > warmup else warmup
            hi = horizon
            if hi > lo:
                c = count[k]
                busy_area[k] += (c if c < srv_v[k] else srv_v[k]) * (hi - lo)
            st_last[k] = horizon
        lo = sys_last if sys_last > warmup else warmup
        if horizon > lo:
            system_area += nsys * (horizon - lo)

    free(heap.data)
    if failed:
        raise MemoryError("event heap allocation failed")
    return completion_a, busy_a, float(system_area), int(nsys)
