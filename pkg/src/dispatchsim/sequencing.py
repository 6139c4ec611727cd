"""Per-taxi sequencing: order assigned passengers to minimize total waiting.

Each passenger is served pickup-then-dropoff with no pooling, so a route is a
permutation of the assigned passengers and the schedule follows a forward
recurrence: arrive at the next origin, depart at max(arrival, request time),
arrive at the destination one trip later. The exact solver is a subset DP
over (served set, last passenger) states. Accumulated waiting alone is not a
sufficient DP value - a later finish time can cost more downstream - so each
state keeps the Pareto frontier of (waiting, finish time) pairs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import SizeLimitError
from .network import PassengerRequest, TravelTimeMatrix
from .simulator import Task, VehicleView

SEQ_EXACT_LIMIT = 10
BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class Stop:
    """Schedule entry for one passenger on a route."""

    passenger_id: int
    pickup_arrival: int
    pickup_depart: int
    dropoff_arrival: int


@dataclass(frozen=True)
class Route:
    taxi_id: int
    order: tuple[int, ...]
    schedule: tuple[Stop, ...]
    total_wait: int

    def to_tasks(self, requests: dict[int, PassengerRequest]) -> list[Task]:
        """Tasks in route order, carrying the planned schedule."""
        return [
            Task(
                origin=requests[s.passenger_id].origin,
                destination=requests[s.passenger_id].destination,
                taxi_arrival=s.pickup_arrival,
                passenger_ready=requests[s.passenger_id].request_time,
                depart=s.pickup_depart,
                passenger_id=s.passenger_id,
            )
            for s in self.schedule
        ]


def route_times(
    taxi: VehicleView,
    order: tuple[int, ...] | list[int],
    requests: dict[int, PassengerRequest],
    matrix: TravelTimeMatrix,
) -> tuple[tuple[Stop, ...], int]:
    """Forward recurrence for a fixed visiting order.

    Returns the schedule and the total wait sum(pickup_depart - request_time),
    which equals sum(max(pickup_arrival - request_time, 0)).
    """
    t = taxi.free_at
    pos = taxi.zone
    schedule: list[Stop] = []
    total_wait = 0
    for pid in order:
        r = requests[pid]
        arrive = t + matrix.time(pos, r.origin)
        depart = max(arrive, r.request_time)
        drop = depart + matrix.time(r.origin, r.destination)
        schedule.append(Stop(pid, arrive, depart, drop))
        total_wait += depart - r.request_time
        t = drop
        pos = r.destination
    return tuple(schedule), total_wait


def solve_sequence(
    taxi: VehicleView,
    assigned: list[PassengerRequest],
    matrix: TravelTimeMatrix,
    limit: int = SEQ_EXACT_LIMIT,
) -> Route:
    """Globally optimal visiting order by subset DP; lexicographic tie-break."""
    n = len(assigned)
    if n > limit:
        raise SizeLimitError(f"{n} passengers exceeds the exact sequencing limit {limit}")
    if n == 0:
        return Route(taxi_id=taxi.taxi_id, order=(), schedule=(), total_wait=0)

    reqs = sorted(assigned, key=lambda r: r.id)
    by_id = {r.id: r for r in reqs}
    # leg[i][j]: dropoff zone of i -> origin of j; start[i]: taxi zone -> origin of i
    start_leg = [matrix.time(taxi.zone, r.origin) for r in reqs]
    trip = [matrix.time(r.origin, r.destination) for r in reqs]
    leg = [[matrix.time(a.destination, b.origin) for b in reqs] for a in reqs]

    # states[mask][last] = list of nondominated (wait, time, order tuple)
    states: list[dict[int, list[tuple[int, int, tuple[int, ...]]]]] = [
        {} for _ in range(1 << n)
    ]
    for i, r in enumerate(reqs):
        arrive = taxi.free_at + start_leg[i]
        depart = max(arrive, r.request_time)
        states[1 << i][i] = [(depart - r.request_time, depart + trip[i], (i,))]

    def push(bucket: list, cand: tuple[int, int, tuple[int, ...]]) -> None:
        w, t, order = cand
        keep = []
        for (w2, t2, o2) in bucket:
            if w2 <= w and t2 <= t and (w2, t2) != (w, t):
                return  # dominated
            if w2 == w and t2 == t:
                if o2 <= order:
                    return
                continue  # replaced by lexicographically smaller order
            if not (w <= w2 and t <= t2):
                keep.append((w2, t2, o2))
        keep.append(cand)
        bucket[:] = keep

    for mask in range(1, 1 << n):
        layer = states[mask]
        if not layer:
            continue
        for last, candidates in layer.items():
            for j in range(n):
                if mask & (1 << j):
                    continue
                r = reqs[j]
                nmask = mask | (1 << j)
                bucket = states[nmask].setdefault(j, [])
                for (w, t, order) in candidates:
                    arrive = t + leg[last][j]
                    depart = max(arrive, r.request_time)
                    push(bucket, (w + depart - r.request_time, depart + trip[j], order + (j,)))

    full = states[(1 << n) - 1]
    best = None
    for candidates in full.values():
        for (w, t, order) in candidates:
            key = (w, order)
            if best is None or key < best:
                best = key
    order_ids = tuple(reqs[i].id for i in best[1])
    schedule, total = route_times(taxi, order_ids, by_id, matrix)
    return Route(taxi_id=taxi.taxi_id, order=order_ids, schedule=schedule, total_wait=total)


def brute_force_sequence(
    taxi: VehicleView,
    assigned: list[PassengerRequest],
    matrix: TravelTimeMatrix,
) -> Route:
    """Full permutation enumeration; test oracle for solve_sequence."""
    n = len(assigned)
    if n > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(f"{n} passengers exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    if n == 0:
        return Route(taxi_id=taxi.taxi_id, order=(), schedule=(), total_wait=0)
    by_id = {r.id: r for r in assigned}
    ids = sorted(by_id)
    best_key = None
    best = None
    for perm in itertools.permutations(ids):
        schedule, total = route_times(taxi, perm, by_id, matrix)
        key = (total, perm)
        if best_key is None or key < best_key:
            best_key = key
            best = Route(taxi_id=taxi.taxi_id, order=perm, schedule=schedule, total_wait=total)
    return best


def greedy_sequence(
    taxi: VehicleView,
    assigned: list[PassengerRequest],
    matrix: TravelTimeMatrix,
) -> Route:
    """Deterministic nearest-departure construction for oversized groups."""
    by_id = {r.id: r for r in assigned}
    remaining = sorted(by_id)
    t = taxi.free_at
    pos = taxi.zone
    order: list[int] = []
    while remaining:
        best_pid = None
        best_key = None
        for pid in remaining:
            r = by_id[pid]
            depart = max(t + matrix.time(pos, r.origin), r.request_time)
            key = (depart, pid)
            if best_key is None or key < best_key:
                best_key = key
                best_pid = pid
        order.append(best_pid)
        r = by_id[best_pid]
        t = best_key[0] + matrix.time(r.origin, r.destination)
        pos = r.destination
        remaining.remove(best_pid)
    schedule, total = route_times(taxi, tuple(order), by_id, matrix)
    return Route(taxi_id=taxi.taxi_id, order=tuple(order), schedule=schedule, total_wait=total)


def sequence_for_engine(
    taxi: VehicleView,
    assigned: list[PassengerRequest],
    matrix: TravelTimeMatrix,
    limit: int = SEQ_EXACT_LIMIT,
) -> Route:
    """Exact within the limit, greedy beyond it; what the dispatch loop uses."""
    if len(assigned) <= limit:
        return solve_sequence(taxi, assigned, matrix, limit=limit)
    return greedy_sequence(taxi, assigned, matrix)
