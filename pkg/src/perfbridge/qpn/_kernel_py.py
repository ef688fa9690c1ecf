"""Pure-Python station kernel (fallback for the compiled ``_kernel``).

Both implementations follow the same operation order so that they produce
bit-identical results; keep them in sync.
"""

from __future__ import annotations

import heapq
import math

import numpy as np


def run_stations(arrival, ptr, station, work, servers, is_ps, warmup, horizon):
    """Simulate requests with pre-sampled routes through a set of stations.

    Parameters
    ----------
    arrival : float64[n]
        Arrival times, non-decreasing.
    ptr : int64[n + 1]
        Request ``r`` visits ``station[ptr[r]:ptr[r + 1]]`` in order, needing
        ``work[ptr[r]:ptr[r + 1]]`` seconds of service at each.
    servers, is_ps : int32[S], int8[S]
        Server count and discipline (0 = FCFS, 1 = processor sharing).
    warmup, horizon : float
        Statistics are integrated over ``[warmup, horizon]``; nothing after
        ``horizon`` is simulated.

    Returns
    -------
    completion : float64[n]
        Completion time, NaN for requests still in the system at the horizon.
    busy_area : float64[S]
        Integral of busy servers over the measurement window.
    system_area : float
        Integral of the number of requests in the system over the window.
    in_system : int
        Requests present at the horizon.
    """
    arrival = np.asarray(arrival, dtype=np.float64).tolist()
    ptr = np.asarray(ptr, dtype=np.int64).tolist()
    station = np.asarray(station, dtype=np.int32).tolist()
    work = np.asarray(work, dtype=np.float64).tolist()
    servers = np.asarray(servers, dtype=np.int32).tolist()
    is_ps = np.asarray(is_ps, dtype=np.int8).tolist()
    warmup = float(warmup)
    horizon = float(horizon)

    n = len(arrival)
    S = len(servers)
    nan = math.nan
    inf = math.inf
    completion = [nan] * n
    pos = ptr[:-1]

    count = [0] * S
    st_last = [0.0] * S
    busy_area = [0.0] * S
    # FCFS waiting line
    q_head = [-1] * S
    q_tail = [-1] * S
    q_next = [-1] * n
    # processor-sharing active set (insertion-ordered doubly linked list)
    ps_head = [-1] * S
    ps_tail = [-1] * S
    ps_next = [-1] * n
    ps_prev = [-1] * n
    ps_last = [0.0] * S
    version = [0] * S
    rem = [0.0] * n

    heap: list = []
    seq = 0
    nsys = 0
    sys_last = 0.0
    system_area = 0.0

    def acc_station(s, t):
        lo = st_last[s] if st_last[s] > warmup else warmup
        hi = t if t < horizon else horizon
        if hi > lo:
            c = count[s]
            busy_area[s] += (c if c < servers[s] else servers[s]) * (hi - lo)
        st_last[s] = t

    def acc_system(t):
        nonlocal system_area, sys_last
        lo = sys_last if sys_last > warmup else warmup
        hi = t if t < horizon else horizon
        if hi > lo:
            system_area += nsys * (hi - lo)
        sys_last = t

    def ps_advance(s, t):
        dt = t - ps_last[s]
        c = count[s]
        if c > 0 and dt > 0.0:
            rate = servers[s] / c if c > servers[s] else 1.0
            step = rate * dt
            j = ps_head[s]
            while j != -1:
                rem[j] -= step
                j = ps_next[j]
        ps_last[s] = t

    def ps_schedule(s, t):
        nonlocal seq
        version[s] += 1
        c = count[s]
        if c == 0:
            return
        j = ps_head[s]
        m = rem[j]
        j = ps_next[j]
        while j != -1:
            if rem[j] < m:
                m = rem[j]
            j = ps_next[j]
        if m < 0.0:
            m = 0.0
        rate = servers[s] / c if c > servers[s] else 1.0
        heapq.heappush(heap, (t + m / rate, seq, s, version[s]))
        seq += 1

    def enter(r, t):
        nonlocal seq, nsys
        if pos[r] == ptr[r + 1]:
            acc_system(t)
            nsys -= 1
            completion[r] = t
            return
        v = pos[r]
        s = station[v]
        acc_station(s, t)
        if is_ps[s]:
            ps_advance(s, t)
            rem[r] = work[v]
            ps_prev[r] = ps_tail[s]
            ps_next[r] = -1
            if ps_tail[s] == -1:
                ps_head[s] = r
            else:
                ps_next[ps_tail[s]] = r
            ps_tail[s] = r
            count[s] += 1
            ps_schedule(s, t)
        else:
            count[s] += 1
            if count[s] <= servers[s]:
                heapq.heappush(heap, (t + work[v], seq, s, r))
                seq += 1
            else:
                q_next[r] = -1
                if q_tail[s] == -1:
                    q_head[s] = r
                else:
                    q_next[q_tail[s]] = r
                q_tail[s] = r

    i_arr = 0
    while True:
        ht = heap[0][0] if heap else inf
        at = arrival[i_arr] if i_arr < n else inf
        if ht <= at:
            t = ht
        else:
            t = at
        if t > horizon or t == inf:
            break
        if ht <= at:
            _, _, s, x = heapq.heappop(heap)
            if is_ps[s]:
                if x != version[s]:
                    continue
                acc_station(s, t)
                ps_advance(s, t)
                # earliest finisher: smallest remaining work, first inserted on ties
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
                ps_schedule(s, t)
            else:
                r = x
                acc_station(s, t)
                count[s] -= 1
                q = q_head[s]
                if q != -1:
                    q_head[s] = q_next[q]
                    if q_head[s] == -1:
                        q_tail[s] = -1
                    heapq.heappush(heap, (t + work[pos[q]], seq, s, q))
                    seq += 1
            pos[r] += 1
            enter(r, t)
        else:
            r = i_arr
            i_arr += 1
            acc_system(t)
            nsys += 1
            enter(r, t)

    for s in range(S):
        acc_station(s, horizon)
    acc_system(horizon)
    return (
        np.asarray(completion, dtype=np.float64),
        np.asarray(busy_area, dtype=np.float64),
        float(system_area),
        int(nsys),
    )
