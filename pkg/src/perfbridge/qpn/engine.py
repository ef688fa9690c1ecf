"""Token-level QPN interpreter for models the routing engine cannot handle.

Every token belongs to a request.  A firing consumes tokens FIFO from its
input places; the produced tokens belong to the request that owned the first
consumed token.  A request completes when its last token is consumed by a
mode that produces nothing for it.
"""

from __future__ import annotations

import heapq
import math
from collections import deque

import numpy as np

from ..errors import ModelValidationError
from .model import QpnModel

MAX_FIRINGS_PER_INSTANT = 1_000_000


def run_general(model: QpnModel, config, seed: int):
    from .simulate import _SERVICE, _CHOICE, _RunOutput, _requests, stream

    warmup, horizon = config.warmup_s, config.duration_s
    arrival, cls_idx, start_key, starts, _ = _requests(model, seed, horizon)
    n_req = arrival.size

    qplaces = model.queueing_places
    q_index = {p.name: i for i, p in enumerate(qplaces)}
    S = len(qplaces)
    servers = [p.queue.servers for p in qplaces]
    is_ps = [p.queue.discipline == "PS" for p in qplaces]
    demands = [dict(p.queue.service_demand_s) for p in qplaces]
    deterministic = [p.queue.distribution == "deterministic" for p in qplaces]
    service_rng = [stream(seed, _SERVICE, p.name) for p in qplaces]
    choice_rng = {t.name: stream(seed, _CHOICE, t.name) for t in model.transitions}

    # per mode: aggregated input requirements
    needs = []
    for t in model.transitions:
        per_mode = []
        for m in t.modes:
            req: dict[tuple[str, str], int] = {}
            for a in m.inputs:
                req[(a.place, a.color)] = req.get((a.place, a.color), 0) + a.weight
            per_mode.append(req)
        needs.append(per_mode)

    depository: dict[tuple[str, str], deque] = {}
    token_req: list[int] = []
    token_color: list[str] = []
    outstanding = [0] * n_req
    completion = np.full(n_req, np.nan)

    count = [0] * S
    st_last = [0.0] * S
    busy_area = [0.0] * S
    waiting = [deque() for _ in range(S)]
    ps_rem: list[dict[int, float]] = [dict() for _ in range(S)]
    ps_last = [0.0] * S
    version = [0] * S

    heap: list = []
    seq = 0
    nsys = 0
    sys_last = 0.0
    system_area = 0.0

    def acc_station(s, t):
        lo = max(st_last[s], warmup)
        hi = min(t, horizon)
        if hi > lo:
            busy_area[s] += min(count[s], servers[s]) * (hi - lo)
        st_last[s] = t

    def acc_system(t):
        nonlocal system_area, sys_last
        lo = max(sys_last, warmup)
        hi = min(t, horizon)
        if hi > lo:
            system_area += nsys * (hi - lo)
        sys_last = t

    def draw(s, color):
        d = demands[s][color]
        if deterministic[s]:
            return d
        return d * float(service_rng[s].standard_exponential())

    def push(t, s, x):
        nonlocal seq
        heapq.heappush(heap, (t, seq, s, x))
        seq += 1

    def ps_advance(s, t):
        dt = t - ps_last[s]
        c = count[s]
        if c > 0 and dt > 0:
            step = (servers[s] / c if c > servers[s] else 1.0) * dt
            for k in ps_rem[s]:
                ps_rem[s][k] -= step
        ps_last[s] = t

    def ps_schedule(s, t):
        version[s] += 1
        c = count[s]
        if c:
            m = max(0.0, min(ps_rem[s].values()))
            push(t + m / (servers[s] / c if c > servers[s] else 1.0), s, ("ps", version[s]))

    def new_token(req, place, color, t):
        tok = len(token_req)
        token_req.append(req)
        token_color.append(color)
        s = q_index.get(place)
        if s is None:
            depository.setdefault((place, color), deque()).append(tok)
            return
        acc_station(s, t)
        if is_ps[s]:
            ps_advance(s, t)
            ps_rem[s][tok] = draw(s, color)
            count[s] += 1
            ps_schedule(s, t)
        else:
            count[s] += 1
            if count[s] <= servers[s]:
                push(t + draw(s, color), s, tok)
            else:
                waiting[s].append(tok)

    def finish_service(s, tok, t):
        depository.setdefault((qplaces[s].name, token_color[tok]), deque()).append(tok)

    def complete(req, t):
        nonlocal nsys
        acc_system(t)
        nsys -= 1
        completion[req] = t

    def fire_all(t):
        fired = 0
        while True:
            progress = False
            for ti, tr in enumerate(model.transitions):
                enabled = [
                    mi
                    for mi, req in enumerate(needs[ti])
                    if all(len(depository.get(k, ())) >= w for k, w in req.items())
                ]
                if not enabled:
                    continue
                weights = np.array([tr.modes[mi].probability for mi in enabled])
                if weights.sum() <= 0:
                    continue
                if len(enabled) == 1:
                    mi = enabled[0]
                else:
                    u = choice_rng[tr.name].random() * weights.sum()
                    mi = enabled[min(int(np.searchsorted(np.cumsum(weights), u, side="right")), len(enabled) - 1)]
                mode = tr.modes[mi]
                consumed = []
                for a in mode.inputs:
                    dq = depository[(a.place, a.color)]
                    consumed.extend(dq.popleft() for _ in range(a.weight))
                owner = token_req[consumed[0]]
                for a in mode.outputs:
                    for _ in range(a.weight):
                        outstanding[owner] += 1
                        new_token(owner, a.place, a.color, t)
                for tok in consumed:
                    r = token_req[tok]
                    outstanding[r] -= 1
                    if outstanding[r] == 0:
                        complete(r, t)
                fired += 1
                if fired > MAX_FIRINGS_PER_INSTANT:
                    raise ModelValidationError(f"transitions keep firing at t={t}: livelock")
                progress = True
                break
            if not progress:
                return

    i_arr = 0
    inf = math.inf
    while True:
        ht = heap[0][0] if heap else inf
        at = arrival[i_arr] if i_arr < n_req else inf
        from_heap = ht <= at
        t = ht if from_heap else at
        if t > horizon or t == inf:
            break
        if from_heap:
            _, _, s, x = heapq.heappop(heap)
            if is_ps[s]:
                if x[1] != version[s]:
                    continue
                acc_station(s, t)
                ps_advance(s, t)
                tok = min(ps_rem[s], key=lambda k: (ps_rem[s][k], k))
                del ps_rem[s][tok]
                count[s] -= 1
                ps_schedule(s, t)
            else:
                tok = x
                acc_station(s, t)
                count[s] -= 1
                if waiting[s]:
                    nxt = waiting[s].popleft()
                    push(t + draw(s, token_color[nxt]), s, nxt)
            finish_service(s, tok, t)
        else:
            r = i_arr
            i_arr += 1
            acc_system(t)
            nsys += 1
            outstanding[r] = 1
            place, color = starts[start_key[r]]
            new_token(r, place, color, t)
        fire_all(t)

    for s in range(S):
        acc_station(s, horizon)
    acc_system(horizon)
    return _RunOutput(cls_idx, arrival, completion, np.array(busy_area), system_area, nsys)
