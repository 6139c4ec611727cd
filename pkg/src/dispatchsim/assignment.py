"""First-level solver: assign every pending passenger to exactly one taxi.

Any passenger-to-taxi map is feasible, so the work is all in the objective.
Dispatch is by objective class:

* Linear: rows are independent, per-passenger argmin.
* ConvexLoad: the squared-load terms are separable convex, so pricing the
  k-th seat of a taxi at its marginal cost turns the problem into a linear
  assignment over (taxi, seat) slots - the parallel-arc min-cost-flow
  construction - solved exactly.
* GeneralQuadratic (chaining terms present): exact depth-first branch and
  bound up to a size threshold, greedy insertion plus local search beyond it.

Ties break toward the lowest taxi index, then the lowest passenger index
(lexicographically smallest assignment vector among optima).
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError, SizeLimitError
from .objectives import (
    ChainQuadratic,
    LoadDeviation,
    LoadQuadratic,
    ObjectiveClass,
    ObjectiveSpec,
    PairLinear,
    classify,
    eval_expr,
    evaluate,
    pair_features,
)

EXACT_THRESHOLD = 10
EVALS_PER_MS = 200  # budget unit: candidate evaluations, keeps runs deterministic


def _weight_sums(spec: ObjectiveSpec) -> tuple[float, float, float]:
    w_quad = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, LoadQuadratic))
    w_dev = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, LoadDeviation))
    w_chain = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, ChainQuadratic))
    return w_quad, w_dev, w_chain


def pair_cost_matrix(spec: ObjectiveSpec, snap, matrix, big_m: float) -> np.ndarray:
    """P x C table of the weighted per-pair costs (PairLinear components only)."""
    P, C = len(snap.requests), len(snap.vehicles)
    costs = np.zeros((P, C), dtype=np.float64)
    for j, veh in enumerate(snap.vehicles):
        for i, req in enumerate(snap.requests):
            feats = pair_features(veh, req, matrix, big_m)
            acc = 0.0
            for comp, w in zip(spec.components, spec.weights):
                if isinstance(comp, PairLinear):
                    acc += w * eval_expr(comp.expr, feats)
            costs[i, j] = acc
    return costs


def _chain_matrix(snap, matrix) -> np.ndarray:
    """TRD[p][q]: travel time from p's destination to q's origin."""
    reqs = snap.requests
    P = len(reqs)
    trd = np.zeros((P, P), dtype=np.float64)
    for a in range(P):
        for b in range(P):
            if a != b:
                trd[a, b] = matrix.time(reqs[a].destination, reqs[b].origin)
    return trd


def _to_assignment(snap, choice: list[int]) -> dict[int, int]:
    return {snap.requests[i].id: snap.vehicles[choice[i]].taxi_id for i in range(len(choice))}


def _solve_linear(pair_costs: np.ndarray) -> list[int]:
    return [int(np.argmin(pair_costs[i])) for i in range(pair_costs.shape[0])]


def _solve_convex_flow(pair_costs: np.ndarray, w_quad: float, w_dev: float) -> list[int]:
    """Exact convex-load assignment via unit-seat expansion.

    Seat k of a taxi costs the marginal increase of the load terms when that
    taxi goes from k-1 to k passengers; marginals are nondecreasing in k for
    nonnegative weights, so an optimal seat selection uses each taxi's
    cheapest seats first and the expansion is exact.
    """
    P, C = pair_costs.shape
    mu = P / C
    marginals = np.array(
        [w_quad * (2 * k - 1) + w_dev * (2 * k - 1 - 2 * mu) for k in range(1, P + 1)]
    )
    big = np.repeat(pair_costs, P, axis=1) + np.tile(marginals, C)
    _, cols = linear_sum_assignment(big)
    return [int(c // P) for c in cols]


def _solve_bnb(
    pair_costs: np.ndarray,
    trd: np.ndarray,
    w_quad: float,
    w_dev: float,
    w_chain: float,
    C: int,
) -> tuple[list[int], float]:
    """Exact DFS branch and bound; enumeration order gives the lex tie-break."""
    P = pair_costs.shape[0]
    mu = P / C
    row_min = pair_costs.min(axis=1)
    suffix_min = np.zeros(P + 1)
    for i in range(P - 1, -1, -1):
        suffix_min[i] = suffix_min[i + 1] + row_min[i]
    total_trd = float(trd.sum())

    loads = [0] * C
    members: list[list[int]] = [[] for _ in range(C)]
    best_value = float("inf")
    best_choice: list[int] | None = None
    choice = [0] * P

    def load_cost(ls) -> float:
        acc = 0.0
        if w_quad:
            acc += w_quad * float(sum(l * l for l in ls))
        if w_dev:
            acc += w_dev * float(sum((l - mu) ** 2 for l in ls))
        return acc

    def lower_bound(i: int, pair_sum: float, chain_sum: float) -> float:
        r = P - i
        lb = pair_sum + suffix_min[i]
        if w_quad >= 0:
            lb += w_quad * float(sum(l * l for l in loads))
        else:
            mx = max(loads)
            lb += w_quad * float(sum(l * l for l in loads) - mx * mx + (mx + r) ** 2)
        if w_dev >= 0:
            pass  # deviation can shrink as loads fill in; zero is the safe bound
        else:
            base = float(sum((l - mu) ** 2 for l in loads))
            worst = max(base - (l - mu) ** 2 + (l + r - mu) ** 2 for l in loads)
            lb += w_dev * worst
        if w_chain >= 0:
            lb += w_chain * chain_sum
        else:
            lb += w_chain * total_trd
        return lb

    def dfs(i: int, pair_sum: float, chain_sum: float) -> None:
        nonlocal best_value, best_choice
        if i == P:
            value = pair_sum + load_cost(loads) + w_chain * chain_sum
            if value < best_value:
                best_value = value
                best_choice = choice[:]
            return
        if lower_bound(i, pair_sum, chain_sum) >= best_value:
            return
        for v in range(C):
            delta_chain = 0.0
            for q in members[v]:
                delta_chain += trd[i, q] + trd[q, i]
            loads[v] += 1
            members[v].append(i)
            choice[i] = v
            dfs(i + 1, pair_sum + pair_costs[i, v], chain_sum + delta_chain)
            members[v].pop()
            loads[v] -= 1
    dfs(0, 0.0, 0.0)
    return best_choice, best_value


def solve_exact_bnb(spec: ObjectiveSpec, snap, matrix, big_m: float = 1e6,
                    threshold: int = EXACT_THRESHOLD) -> dict[int, int]:
    """Globally optimal assignment for any objective class, small instances."""
    P, C = len(snap.requests), len(snap.vehicles)
    if C < 1:
        raise InputError("need at least one taxi")
    if P > threshold:
        raise SizeLimitError(f"{P} passengers exceeds the exact threshold {threshold}")
    if P == 0:
        return {}
    pair_costs = pair_cost_matrix(spec, snap, matrix, big_m)
    trd = _chain_matrix(snap, matrix)
    w_quad, w_dev, w_chain = _weight_sums(spec)
    choice, _ = _solve_bnb(pair_costs, trd, w_quad, w_dev, w_chain, C)
    return _to_assignment(snap, choice)


def _greedy_insertion(pair_costs, trd, w_quad, w_dev, w_chain, C) -> list[int]:
    """Assign passengers in id order to the currently cheapest taxi."""
    P = pair_costs.shape[0]
    mu = P / C
    loads = [0] * C
    members: list[list[int]] = [[] for _ in range(C)]
    choice = [0] * P
    for i in range(P):
        best_v, best_delta = 0, None
        for v in range(C):
            delta = pair_costs[i, v]
            delta += w_quad * (2 * loads[v] + 1)
            delta += w_dev * (2 * loads[v] + 1 - 2 * mu)
            if w_chain:
                delta += w_chain * sum(trd[i, q] + trd[q, i] for q in members[v])
            if best_delta is None or delta < best_delta:
                best_delta, best_v = delta, v
        choice[i] = best_v
        loads[best_v] += 1
        members[best_v].append(i)
    return choice


def _local_value(pair_costs, trd, w_quad, w_dev, w_chain, C, choice) -> float:
    P = len(choice)
    mu = P / C
    loads = [0] * C
    members: list[list[int]] = [[] for _ in range(C)]
    value = 0.0
    for i, v in enumerate(choice):
        value += pair_costs[i, v]
        loads[v] += 1
        members[v].append(i)
    value += w_quad * sum(l * l for l in loads)
    value += w_dev * sum((l - mu) ** 2 for l in loads)
    if w_chain:
        for v in range(C):
            for a in members[v]:
                for b in members[v]:
                    if a != b:
                        value += w_chain * trd[a, b]
    return value


def improve_local(
    start: dict[int, int],
    spec: ObjectiveSpec,
    snap,
    matrix,
    budget_ms: int = 200,
    big_m: float = 1e6,
) -> dict[int, int]:
    """Relocate/swap descent from a feasible start, never worse than it.

    The budget is applied as a deterministic candidate-evaluation count
    (EVALS_PER_MS per millisecond) so identical inputs give identical outputs
    on any machine.
    """
    P, C = len(snap.requests), len(snap.vehicles)
    if P == 0 or budget_ms <= 0:
        return dict(start)
    pair_costs = pair_cost_matrix(spec, snap, matrix, big_m)
    trd = _chain_matrix(snap, matrix)
    w_quad, w_dev, w_chain = _weight_sums(spec)
    req_index = {r.id: i for i, r in enumerate(snap.requests)}
    veh_index = {v.taxi_id: j for j, v in enumerate(snap.vehicles)}
    choice = [0] * P
    for pid, tid in start.items():
        choice[req_index[pid]] = veh_index[tid]

    budget = [budget_ms * EVALS_PER_MS]

    def value_of(cand):
        budget[0] -= 1
        return _local_value(pair_costs, trd, w_quad, w_dev, w_chain, C, cand)

    def descend(start_choice, start_value):
        """Best-improvement relocate/swap descent to a local optimum."""
        cur, cur_value = start_choice, start_value
        while budget[0] > 0:
            best_cand, best_value = None, cur_value
            for i in range(P):
                for v in range(C):
                    if v == cur[i]:
                        continue
                    cand = cur[:]
                    cand[i] = v
                    cand_value = value_of(cand)
                    if cand_value < best_value:
                        best_cand, best_value = cand, cand_value
                    if budget[0] <= 0:
                        break
                if budget[0] <= 0:
                    break
            for i in range(P):
                for j in range(i + 1, P):
                    if cur[i] == cur[j]:
                        continue
                    cand = cur[:]
                    cand[i], cand[j] = cand[j], cand[i]
                    cand_value = value_of(cand)
                    if cand_value < best_value:
                        best_cand, best_value = cand, cand_value
                    if budget[0] <= 0:
                        break
                if budget[0] <= 0:
                    break
            if best_cand is None:
                break
            cur, cur_value = best_cand, best_value
        return cur, cur_value

    value = _local_value(pair_costs, trd, w_quad, w_dev, w_chain, C, choice)
    best_choice, best_value = descend(choice, value)
    # deterministic kicks: restart from the best point with one passenger moved
    kick = 0
    while budget[0] > 0 and kick < P * C:
        i, v = kick % P, (best_choice[kick % P] + 1 + kick // P) % C
        kick += 1
        if v == best_choice[i]:
            continue
        cand = best_choice[:]
        cand[i] = v
        cand_choice, cand_value = descend(cand, value_of(cand))
        if cand_value < best_value:
            best_choice, best_value = cand_choice, cand_value
            kick = 0
    return _to_assignment(snap, best_choice)


def solve(
    spec: ObjectiveSpec,
    snap,
    matrix,
    budget_ms: int = 200,
    big_m: float = 1e6,
    exact_threshold: int = EXACT_THRESHOLD,
) -> dict[int, int]:
    """Assignment minimizing the objective; always feasible, deterministic."""
    P, C = len(snap.requests), len(snap.vehicles)
    if C < 1:
        raise InputError("need at least one taxi")
    if P == 0:
        return {}

    pair_costs = pair_cost_matrix(spec, snap, matrix, big_m)
    w_quad, w_dev, w_chain = _weight_sums(spec)
    kind = classify(spec)

    if kind is ObjectiveClass.LINEAR:
        return _to_assignment(snap, _solve_linear(pair_costs))

    if kind is ObjectiveClass.CONVEX_LOAD and w_quad >= 0 and w_dev >= 0:
        return _to_assignment(snap, _solve_convex_flow(pair_costs, w_quad, w_dev))

    # General quadratic terms (or concave load weights): exact when small.
    if P <= exact_threshold:
        trd = _chain_matrix(snap, matrix)
        choice, _ = _solve_bnb(pair_costs, trd, w_quad, w_dev, w_chain, C)
        return _to_assignment(snap, choice)

    trd = _chain_matrix(snap, matrix)
    start = _to_assignment(snap, _greedy_insertion(pair_costs, trd, w_quad, w_dev, w_chain, C))
    return improve_local(start, spec, snap, matrix, budget_ms=budget_ms, big_m=big_m)


def assignment_value(spec: ObjectiveSpec, assignment: dict[int, int], snap, matrix,
                     big_m: float = 1e6) -> float:
    """Objective value of an assignment, via the shared evaluator."""
    return evaluate(spec, assignment, snap, matrix, big_m=big_m)
