import numpy as np
import pytest

from dispatchsim.network import (
    OdFrequency,
    PassengerRequest,
    Scenario,
    ScenarioSpec,
    TaxiInit,
    TravelTimeMatrix,
)
from dispatchsim.simulator import DynContext, VehicleView


def make_matrix(rows):
    return TravelTimeMatrix(np.asarray(rows))


def symmetric_matrix(n, rng, max_tr=900):
    """Random symmetric travel times with a zero diagonal."""
    tr = rng.integers(1, max_tr + 1, size=(n, n))
    tr = np.triu(tr, 1)
    tr = tr + tr.T
    return TravelTimeMatrix(tr)


def make_snapshot(vehicles, requests, clock=0):
    """Build a dispatcher context directly.

    vehicles: list of (zone, free_at); requests: list of (origin, destination,
    request_time) tuples, ids assigned by position.
    """
    veh = tuple(VehicleView(taxi_id=i, zone=z, free_at=t) for i, (z, t) in enumerate(vehicles))
    reqs = tuple(
        PassengerRequest(id=i, origin=o, destination=d, request_time=t)
        for i, (o, d, t) in enumerate(requests)
    )
    return DynContext(clock=clock, vehicles=veh, requests=reqs)


def make_scenario(requests, fleet, window, seed=0, matrix_ref="<memory>"):
    reqs = tuple(
        PassengerRequest(id=i, origin=o, destination=d, request_time=t)
        for i, (o, d, t) in enumerate(sorted(requests, key=lambda r: r[2]))
    )
    taxis = tuple(TaxiInit(id=i, start_zone=z, available_at=a) for i, (z, a) in enumerate(fleet))
    spec = ScenarioSpec(passengers=len(reqs), taxis=len(taxis), window=window, seed=seed)
    return Scenario(spec=spec, requests=reqs, fleet=taxis, matrix_ref=matrix_ref)


def random_scenario(rng, matrix, passengers, taxis, window):
    """Seeded random scenario over an existing matrix."""
    n = matrix.zone_count
    requests = []
    for _ in range(passengers):
        o = int(rng.integers(0, n))
        d = int(rng.integers(0, n - 1))
        if d >= o:
            d += 1
        requests.append((o, d, int(rng.integers(0, window + 1))))
    fleet = [(int(rng.integers(0, n)), 0) for _ in range(taxis)]
    return make_scenario(requests, fleet, window)


def enumeration_min_vectorized(spec, snap, matrix, big_m=1e6):
    """Exhaustive assignment oracle over all C^P maps, evaluated with numpy.

    Uses only integer/dyadic-exact arithmetic so its minimum is bit-comparable
    with the shared evaluator on exactness-safe instances. Returns
    (min_value, argmin_choice_tuple) with the lexicographically smallest
    argmin.
    """
    from dispatchsim.objectives import (
        ChainQuadratic,
        LoadDeviation,
        LoadQuadratic,
        PairLinear,
        eval_expr,
        pair_features,
    )

    P, C = len(snap.requests), len(snap.vehicles)
    if P == 0:
        return 0.0, ()
    pair = np.zeros((P, C))
    for j, v in enumerate(snap.vehicles):
        for i, r in enumerate(snap.requests):
            feats = pair_features(v, r, matrix, big_m)
            pair[i, j] = sum(
                w * eval_expr(c.expr, feats)
                for c, w in zip(spec.components, spec.weights)
                if isinstance(c, PairLinear)
            )
    w_quad = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, LoadQuadratic))
    w_dev = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, LoadDeviation))
    w_chain = sum(w for c, w in zip(spec.components, spec.weights) if isinstance(c, ChainQuadratic))

    vecs = np.stack(
        np.meshgrid(*[np.arange(C)] * P, indexing="ij"), axis=-1
    ).reshape(-1, P)
    values = pair[np.arange(P), vecs].sum(axis=1)
    if w_quad or w_dev:
        loads = (vecs[:, :, None] == np.arange(C)[None, None, :]).sum(axis=1)
        if w_quad:
            values = values + w_quad * (loads.astype(np.float64) ** 2).sum(axis=1)
        if w_dev:
            values = values + w_dev * ((loads - P / C) ** 2).sum(axis=1)
    if w_chain:
        trd = np.zeros((P, P))
        for a in range(P):
            for b in range(P):
                if a != b:
                    trd[a, b] = matrix.time(
                        snap.requests[a].destination, snap.requests[b].origin
                    )
        chain = np.zeros(len(vecs))
        for a in range(P):
            for b in range(P):
                if a != b and trd[a, b]:
                    chain += trd[a, b] * (vecs[:, a] == vecs[:, b])
        values = values + w_chain * chain
    best = int(values.argmin())  # argmin returns the first, i.e. lex-smallest, index
    return float(values[best]), tuple(int(x) for x in vecs[best])


@pytest.fixture
def two_zone_matrix():
    return make_matrix([[0, 300], [300, 0]])


@pytest.fixture
def line_matrix():
    # zones 0-1-2-3 on a line, 100 s per hop
    return make_matrix(
        [
            [0, 100, 200, 300],
            [100, 0, 100, 200],
            [200, 100, 0, 100],
            [300, 200, 100, 0],
        ]
    )


@pytest.fixture
def uniform_freq():
    w = np.ones((4, 4))
    np.fill_diagonal(w, 0.0)
    return OdFrequency(w)
