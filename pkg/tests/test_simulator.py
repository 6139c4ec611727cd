import numpy as np
import pytest

from dispatchsim.errors import CommandError, InternalError, UnservedPassengersError
from dispatchsim.metrics import collect_metrics
from dispatchsim.simulator import (
    DROPOFF,
    PICKUP,
    Task,
    clairvoyant_snapshot,
    finalize_trace,
    init,
    merge_commands,
    run_until_drained,
    snapshot,
    step,
    trace_to_jsonl,
    vehicle_view,
)

from conftest import make_scenario, random_scenario


def task(origin, destination, pid, ready=0, arrival=0, depart=0):
    return Task(
        origin=origin,
        destination=destination,
        taxi_arrival=arrival,
        passenger_ready=ready,
        depart=depart,
        passenger_id=pid,
    )


@pytest.fixture
def basic(two_zone_matrix):
    scenario = make_scenario(
        requests=[(0, 1, 0), (1, 0, 0), (0, 1, 100)],
        fleet=[(0, 0), (1, 0)],
        window=600,
    )
    return scenario, two_zone_matrix


class TestInit:
    def test_initial_state(self, basic):
        scenario, matrix = basic
        state = init(scenario, matrix)
        assert state.clock == 0
        assert all(t.idle for t in state.taxis)
        assert len(state.pending) == 3
        assert state.served == {}

    def test_repeatable(self, basic):
        scenario, matrix = basic
        a, b = init(scenario, matrix), init(scenario, matrix)
        assert a.pending == b.pending
        assert [(t.heading, t.arrive_at) for t in a.taxis] == [
            (t.heading, t.arrive_at) for t in b.taxis
        ]


class TestStep:
    def test_pickup_at_own_zone(self, basic):
        # taxi at 0, task 0 -> 1 ready at 0; pickup t=0, dropoff t=300
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(0, 1, pid=0)]})
        state = step(state, 600)
        assert state.served[0] == (0, 300)
        taxi = state.taxis[0]
        assert taxi.idle and taxi.heading == 1

    def test_positioning_leg_before_pickup(self, basic):
        # taxi at 0, task origin 1: pickup at 300, dropoff at 600
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(1, 0, pid=1)]})
        state = step(state, 900)
        assert state.served[1] == (300, 600)

    def test_idle_fleet_only_clock_moves(self, basic):
        scenario, matrix = basic
        state = init(scenario, matrix)
        after = step(state, 250)
        assert after.clock == 250
        assert after.served == {}
        assert [(t.heading, t.arrive_at) for t in after.taxis] == [
            (t.heading, t.arrive_at) for t in state.taxis
        ]

    def test_waits_for_late_passenger(self, basic):
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(0, 1, pid=2, ready=100)]})
        state = step(state, 600)
        assert state.served[2] == (100, 400)  # boards at the request time

    def test_tick_composability(self, two_zone_matrix):
        scenario = make_scenario(
            requests=[(0, 1, 5), (1, 0, 30), (0, 1, 220)],
            fleet=[(0, 0), (1, 40)],
            window=300,
        )
        state = merge_commands(
            init(scenario, two_zone_matrix),
            {0: [task(0, 1, pid=0, ready=5), task(0, 1, pid=2, ready=220)], 1: [task(1, 0, pid=1, ready=30)]},
        )
        one_shot = step(state, 1000)
        pieces = step(step(step(state, 130), 600), 270)
        assert one_shot.served == pieces.served
        assert one_shot.clock == pieces.clock
        assert [(t.heading, t.arrive_at, t.queue) for t in one_shot.taxis] == [
            (t.heading, t.arrive_at, t.queue) for t in pieces.taxis
        ]

    def test_dt_must_be_positive(self, basic):
        scenario, matrix = basic
        with pytest.raises(CommandError):
            step(init(scenario, matrix), 0)

    def test_inconsistent_heading_aborts(self, line_matrix):
        scenario = make_scenario(requests=[(0, 1, 0)], fleet=[(0, 0)], window=10)
        state = merge_commands(init(scenario, line_matrix), {0: [task(0, 1, pid=0)]})
        state.taxis[0].queue[0] = task(2, 3, pid=0)  # corrupt: heading matches neither end
        state.taxis[0].heading = 0
        state.taxis[0].arrive_at = state.clock
        with pytest.raises(InternalError):
            step(state, 10)


class TestMergeCommands:
    def test_idle_taxi_adopts_queue(self, basic):
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(0, 1, 0), task(1, 0, 1)]})
        assert len(state.taxis[0].queue) == 2
        assert 0 not in state.pending and 1 not in state.pending

    def test_busy_taxi_appends_head_untouched(self, basic):
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(0, 1, 0)]})
        state = step(state, 100)  # in flight toward zone 1
        head_before = state.taxis[0].queue[0]
        state = merge_commands(state, {0: [task(1, 0, 1)]})
        assert len(state.taxis[0].queue) == 2
        assert state.taxis[0].queue[0] == head_before

    def test_duplicate_passenger_rejected(self, basic):
        scenario, matrix = basic
        with pytest.raises(CommandError, match="twice"):
            merge_commands(
                init(scenario, matrix), {0: [task(0, 1, 0)], 1: [task(0, 1, 0)]}
            )

    def test_non_pending_passenger_rejected(self, basic):
        scenario, matrix = basic
        state = merge_commands(init(scenario, matrix), {0: [task(0, 1, 0)]})
        with pytest.raises(CommandError, match="not pending"):
            merge_commands(state, {1: [task(0, 1, 0)]})

    def test_unknown_taxi_rejected(self, basic):
        scenario, matrix = basic
        with pytest.raises(CommandError, match="unknown taxi"):
            merge_commands(init(scenario, matrix), {9: [task(0, 1, 0)]})

    def test_unavailable_taxi_starts_later(self, two_zone_matrix):
        scenario = make_scenario(
            requests=[(0, 1, 0)], fleet=[(0, 500)], window=100
        )
        state = merge_commands(init(scenario, two_zone_matrix), {0: [task(0, 1, 0)]})
        state = run_until_drained(state, dt=50)
        assert state.served[0] == (500, 800)


class TestSnapshot:
    def test_idle_taxi_entry(self, basic):
        scenario, matrix = basic
        state = step(init(scenario, matrix), 100)
        snap = snapshot(state)
        assert snap.vehicles[0].zone == 0
        assert snap.vehicles[0].free_at == 100

    def test_only_visible_requests(self, basic):
        scenario, matrix = basic
        snap = snapshot(init(scenario, matrix))
        assert [r.id for r in snap.requests] == [0, 1]  # the t=100 request is future
        snap_all = clairvoyant_snapshot(init(scenario, matrix))
        assert [r.id for r in snap_all.requests] == [0, 1, 2]

    def test_busy_taxi_forward_simulation_matches_execution(self, line_matrix):
        # independent oracle: run the simulator forward and compare
        rng = np.random.default_rng(5)
        for trial in range(30):
            scenario = random_scenario(rng, line_matrix, passengers=4, taxis=1, window=400)
            state = merge_commands(
                init(scenario, line_matrix),
                {0: [task(r.origin, r.destination, r.id, ready=r.request_time)
                     for r in scenario.requests]},
            )
            state = step(state, int(rng.integers(1, 300)))
            view = vehicle_view(state.taxis[0], state.clock, line_matrix)
            drained = run_until_drained(state, dt=20)
            last_drop = max(t for (_, t) in drained.served.values())
            final_zone = drained.taxis[0].heading
            assert view.zone == final_zone
            assert view.free_at == last_drop

    def test_no_pending_empty(self, two_zone_matrix):
        scenario = make_scenario(requests=[(0, 1, 0)], fleet=[(0, 0)], window=10)
        state = merge_commands(init(scenario, two_zone_matrix), {0: [task(0, 1, 0)]})
        assert snapshot(state).requests == ()


class TestConservation:
    def test_full_runs_conserve_passengers(self, line_matrix):
        rng = np.random.default_rng(11)
        for trial in range(20):
            scenario = random_scenario(rng, line_matrix, passengers=6, taxis=2, window=500)
            state = init(scenario, line_matrix)
            # assign everything up front, two groups
            plans = {0: [], 1: []}
            for r in scenario.requests:
                plans[r.id % 2].append(task(r.origin, r.destination, r.id, ready=r.request_time))
            state = merge_commands(state, plans)
            state = run_until_drained(state, dt=30)
            trace = finalize_trace(state)
            pickups = [e for e in trace.events if e.kind == PICKUP]
            dropoffs = [e for e in trace.events if e.kind == DROPOFF]
            assert sorted(e.passenger for e in pickups) == [r.id for r in scenario.requests]
            assert sorted(e.passenger for e in dropoffs) == [r.id for r in scenario.requests]
            times = [e.time for e in trace.events]
            assert times == sorted(times)
            for r in scenario.requests:
                pickup_t, dropoff_t = state.served[r.id]
                assert pickup_t >= r.request_time
                assert dropoff_t - pickup_t == line_matrix.time(r.origin, r.destination)


def test_trace_jsonl_format(two_zone_matrix):
    scenario = make_scenario(requests=[(0, 1, 0)], fleet=[(0, 0)], window=10)
    state = merge_commands(init(scenario, two_zone_matrix), {0: [task(0, 1, 0)]})
    state = run_until_drained(state, dt=100)
    text = trace_to_jsonl(finalize_trace(state))
    lines = text.strip().splitlines()
    assert len(lines) == 2
    import json

    first = json.loads(lines[0])
    assert first == {"t": 0, "taxi": 0, "pass": 0, "kind": "pickup"}


def test_metrics_requires_complete_trace(two_zone_matrix):
    scenario = make_scenario(requests=[(0, 1, 0), (1, 0, 50)], fleet=[(0, 0)], window=100)
    state = merge_commands(init(scenario, two_zone_matrix), {0: [task(0, 1, 0)]})
    state = step(state, 400)
    with pytest.raises(UnservedPassengersError, match=r"\[1\]"):
        collect_metrics(finalize_trace(state), scenario)
