import itertools

import numpy as np
import pytest

from dispatchsim.assignment import (
    improve_local,
    solve,
    solve_exact_bnb,
)
from dispatchsim.errors import SizeLimitError
from dispatchsim.objectives import (
    ChainQuadratic,
    LoadDeviation,
    LoadQuadratic,
    ObjectiveClass,
    ObjectiveSpec,
    PairLinear,
    builtin,
    evaluate,
    parse_expr,
)

from conftest import enumeration_min_vectorized, make_matrix, make_snapshot, symmetric_matrix

PAIR_EXPRS = (
    "TR_origin_start + TR_dest_start",
    "abs(time_gap)",
    "TR_trip",
    "relu(-time_gap) + TR_origin_start",
    "2 * TR_origin_start - TR_trip",
)


def enumeration_min(spec, snap, matrix):
    """Independent oracle: exhaustive search, costs via the shared evaluator."""
    P, C = len(snap.requests), len(snap.vehicles)
    best_value, best_vec = None, None
    for vec in itertools.product(range(C), repeat=P):
        a = {snap.requests[i].id: snap.vehicles[vec[i]].taxi_id for i in range(P)}
        v = evaluate(spec, a, snap, matrix)
        if best_value is None or v < best_value:
            best_value, best_vec = v, vec
    return best_value, best_vec


def random_instance(rng, objective_class, dyadic_taxis=False):
    n_zones = int(rng.integers(2, 6))
    matrix = symmetric_matrix(n_zones, rng)
    P = int(rng.integers(1, 9))
    taxi_choices = (1, 2, 4) if dyadic_taxis else (1, 2, 3, 4)
    C = int(rng.choice(taxi_choices))
    vehicles = [(int(rng.integers(0, n_zones)), int(rng.integers(0, 600))) for _ in range(C)]
    requests = []
    for _ in range(P):
        o = int(rng.integers(0, n_zones))
        d = (o + int(rng.integers(1, n_zones))) % n_zones
        requests.append((o, d, int(rng.integers(0, 900))))
    snap = make_snapshot(vehicles, requests)

    components = [PairLinear(parse_expr(str(rng.choice(PAIR_EXPRS))))]
    weights = [float(rng.integers(1, 4))]
    if objective_class is ObjectiveClass.CONVEX_LOAD:
        components.append(LoadQuadratic() if rng.random() < 0.5 else LoadDeviation())
        weights.append(float(rng.integers(1, 4)))
    elif objective_class is ObjectiveClass.GENERAL_QUADRATIC:
        components.append(ChainQuadratic())
        weights.append(float(rng.integers(1, 3)))
        if rng.random() < 0.5:
            components.append(LoadQuadratic())
            weights.append(float(rng.integers(0, 3)))
    spec = ObjectiveSpec(components=tuple(components), weights=tuple(weights))
    return spec, snap, matrix


class TestSolveExamples:
    def test_colocated_taxis_linear(self):
        # line geometry: taxis at the ends, each passenger strictly local
        matrix = make_matrix(
            [
                [0, 100, 200, 300],
                [100, 0, 100, 200],
                [200, 100, 0, 100],
                [300, 200, 100, 0],
            ]
        )
        snap = make_snapshot(
            vehicles=[(0, 0), (3, 0)], requests=[(0, 1, 0), (3, 2, 0)]
        )
        spec = builtin("distance")
        got = solve(spec, snap, matrix)
        value, best_vec = enumeration_min(spec, snap, matrix)
        assert evaluate(spec, got, snap, matrix) == value
        assert got == {0: 0, 1: 1}

    def test_pure_utilization_balances(self):
        matrix = make_matrix([[0, 300], [300, 0]])
        snap = make_snapshot(
            vehicles=[(0, 0), (1, 0)], requests=[(0, 1, 0)] * 4
        )
        spec = builtin("utilization")
        got = solve(spec, snap, matrix)
        assert evaluate(spec, got, snap, matrix) == 8.0  # loads (2, 2)

    def test_single_passenger_ignores_quadratics(self):
        matrix = make_matrix([[0, 100], [100, 0]])
        snap = make_snapshot(vehicles=[(1, 0), (0, 0)], requests=[(0, 1, 0)])
        spec = ObjectiveSpec(
            components=(
                PairLinear(parse_expr("TR_origin_start")),
                ChainQuadratic(),
                LoadQuadratic(),
            ),
            weights=(1.0, 5.0, 2.0),
        )
        got = solve(spec, snap, matrix)
        assert got == {0: 1}  # taxi at the passenger's origin


class TestExactness:
    @pytest.mark.parametrize(
        "objective_class",
        [ObjectiveClass.LINEAR, ObjectiveClass.CONVEX_LOAD, ObjectiveClass.GENERAL_QUADRATIC],
    )
    def test_matches_enumeration(self, objective_class):
        rng = np.random.default_rng(101)
        for trial in range(200):
            spec, snap, matrix = random_instance(rng, objective_class, dyadic_taxis=True)
            got = solve(spec, snap, matrix)
            assert set(got) == {r.id for r in snap.requests}
            got_value = evaluate(spec, got, snap, matrix)
            best_value, best_vec = enumeration_min_vectorized(spec, snap, matrix)
            assert got_value == best_value, f"{objective_class} trial {trial}"
            # the oracle's own argmin must evaluate to its reported minimum
            argmin_map = {
                snap.requests[i].id: snap.vehicles[best_vec[i]].taxi_id
                for i in range(len(best_vec))
            }
            assert evaluate(spec, argmin_map, snap, matrix) == best_value

    def test_flow_and_bnb_agree_on_convex_load(self):
        rng = np.random.default_rng(202)
        for trial in range(200):
            spec, snap, matrix = random_instance(
                rng, ObjectiveClass.CONVEX_LOAD, dyadic_taxis=True
            )
            flow = solve(spec, snap, matrix)  # dispatches to the flow path
            bnb = solve_exact_bnb(spec, snap, matrix)
            v_flow = evaluate(spec, flow, snap, matrix)
            v_bnb = evaluate(spec, bnb, snap, matrix)
            assert v_flow == v_bnb, f"trial {trial}"

    def test_bnb_matches_linear_argmin(self):
        rng = np.random.default_rng(303)
        for _ in range(50):
            spec, snap, matrix = random_instance(rng, ObjectiveClass.LINEAR)
            a = solve(spec, snap, matrix)
            b = solve_exact_bnb(spec, snap, matrix)
            assert evaluate(spec, a, snap, matrix) == evaluate(spec, b, snap, matrix)

    def test_bnb_threshold(self):
        matrix = make_matrix([[0, 1], [1, 0]])
        snap = make_snapshot(vehicles=[(0, 0)], requests=[(0, 1, 0)] * 11)
        with pytest.raises(SizeLimitError):
            solve_exact_bnb(builtin("distance"), snap, matrix)

    def test_determinism(self):
        rng = np.random.default_rng(404)
        spec, snap, matrix = random_instance(rng, ObjectiveClass.GENERAL_QUADRATIC)
        assert solve(spec, snap, matrix) == solve(spec, snap, matrix)

    def test_tie_break_lowest_taxi(self):
        matrix = make_matrix([[0, 100], [100, 0]])
        snap = make_snapshot(vehicles=[(0, 0), (0, 0), (0, 0)], requests=[(0, 1, 0)])
        got = solve(builtin("distance"), snap, matrix)
        assert got == {0: 0}


class TestImproveLocal:
    def test_fixed_point_on_optimum(self):
        rng = np.random.default_rng(55)
        spec, snap, matrix = random_instance(rng, ObjectiveClass.GENERAL_QUADRATIC)
        best = solve_exact_bnb(spec, snap, matrix)
        improved = improve_local(best, spec, snap, matrix, budget_ms=100)
        assert evaluate(spec, improved, snap, matrix) == evaluate(spec, best, snap, matrix)

    def test_zero_budget_returns_start(self):
        rng = np.random.default_rng(56)
        spec, snap, matrix = random_instance(rng, ObjectiveClass.GENERAL_QUADRATIC)
        start = {r.id: snap.vehicles[0].taxi_id for r in snap.requests}
        assert improve_local(start, spec, snap, matrix, budget_ms=0) == start

    def test_never_worse_and_usually_near_optimal(self):
        rng = np.random.default_rng(57)
        hits = 0
        trials = 100
        for _ in range(trials):
            n_zones = 4
            matrix = symmetric_matrix(n_zones, rng)
            P, C = 6, 3
            snap = make_snapshot(
                vehicles=[(int(rng.integers(0, n_zones)), 0) for _ in range(C)],
                requests=[
                    (
                        int(rng.integers(0, n_zones)),
                        (int(rng.integers(0, n_zones)) + 1) % n_zones,
                        int(rng.integers(0, 600)),
                    )
                    for _ in range(P)
                ],
            )
            spec = ObjectiveSpec(
                components=(
                    PairLinear(parse_expr("TR_origin_start")),
                    ChainQuadratic(),
                ),
                weights=(1.0, 1.0),
            )
            start = {r.id: snap.vehicles[int(rng.integers(0, C))].taxi_id for r in snap.requests}
            start_value = evaluate(spec, start, snap, matrix)
            improved = improve_local(start, spec, snap, matrix, budget_ms=100)
            improved_value = evaluate(spec, improved, snap, matrix)
            assert improved_value <= start_value
            optimum = evaluate(spec, solve_exact_bnb(spec, snap, matrix), snap, matrix)
            if improved_value <= 1.05 * optimum:
                hits += 1
        assert hits >= 90

    def test_feasibility_always(self):
        rng = np.random.default_rng(58)
        for _ in range(20):
            spec, snap, matrix = random_instance(rng, ObjectiveClass.GENERAL_QUADRATIC)
            got = solve(spec, snap, matrix, exact_threshold=2)  # force heuristic path
            assert set(got) == {r.id for r in snap.requests}
            assert all(t in {v.taxi_id for v in snap.vehicles} for t in got.values())
