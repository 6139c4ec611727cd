"""Joint assignment-plus-sequencing optimum on tiny instances.

Exhaustively enumerates every passenger-to-taxi map and sequences each taxi
exactly, so the result is the global minimum total waiting time. Used to
measure how much the two-level decomposition gives away.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import InputError, SizeLimitError
from .objectives import ObjectiveSpec, builtin
from . import assignment as assign
from .sequencing import Route, solve_sequence

MAX_PASSENGERS = 5
MAX_TAXIS = 3


@dataclass(frozen=True)
class HolisticSolution:
    assignment: dict[int, int]
    routes: tuple[Route, ...]
    total_wait: int


def _routes_for(assignment_vec, snap, matrix) -> tuple[tuple[Route, ...], int]:
    by_taxi: dict[int, list] = {v.taxi_id: [] for v in snap.vehicles}
    for i, req in enumerate(snap.requests):
        by_taxi[snap.vehicles[assignment_vec[i]].taxi_id].append(req)
    routes = []
    total = 0
    for veh in snap.vehicles:
        route = solve_sequence(veh, by_taxi[veh.taxi_id], matrix)
        routes.append(route)
        total += route.total_wait
    return tuple(routes), total


def solve_holistic(
    snap,
    matrix,
    max_passengers: int = MAX_PASSENGERS,
    max_taxis: int = MAX_TAXIS,
) -> HolisticSolution:
    """Global optimum over all assignments x per-taxi optimal sequences."""
    P, C = len(snap.requests), len(snap.vehicles)
    if C < 1:
        raise InputError("need at least one taxi")
    if P > max_passengers or C > max_taxis:
        raise SizeLimitError(
            f"instance P={P} C={C} exceeds holistic limits "
            f"({max_passengers} passengers, {max_taxis} taxis)"
        )

    best_key = None
    best: HolisticSolution | None = None
    for vec in itertools.product(range(C), repeat=P):
        routes, total = _routes_for(vec, snap, matrix)
        key = (total, vec)
        if best_key is None or key < best_key:
            best_key = key
            best = HolisticSolution(
                assignment={snap.requests[i].id: snap.vehicles[vec[i]].taxi_id for i in range(P)},
                routes=routes,
                total_wait=total,
            )
    if best is None:  # P == 0: empty instance, zero wait
        return HolisticSolution(assignment={}, routes=(), total_wait=0)
    return best


def hierarchical_pipeline(
    snap,
    matrix,
    spec: ObjectiveSpec | None = None,
) -> HolisticSolution:
    """One point of the holistic search space: assignment objective first,
    exact sequencing second. Default objective is the composite."""
    spec = spec or builtin("default_composite")
    a = assign.solve(spec, snap, matrix)
    veh_index = {v.taxi_id: j for j, v in enumerate(snap.vehicles)}
    vec = [veh_index[a[r.id]] for r in snap.requests]
    routes, total = _routes_for(vec, snap, matrix)
    return HolisticSolution(assignment=a, routes=routes, total_wait=total)
