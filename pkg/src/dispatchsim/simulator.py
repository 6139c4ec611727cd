"""Discrete-event execution of dispatch commands.

The state advances in unit one-second ticks so that no arrival instant is
skipped. Each taxi follows a two-phase automaton per queued task: drive to the
task origin, pick the passenger up no earlier than both the arrival instant
and the request time, drive to the destination, drop off, then immediately
head for the next task's origin (waiting at that origin if the passenger is
not ready yet). A taxi with an empty queue stays idle at its last stop.

Commands are merged, never rewritten: an idle taxi adopts the new queue, a
busy taxi appends behind its current tasks, and the in-flight head task is
never replaced.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CommandError, InternalError
from .network import Scenario, TravelTimeMatrix

PICKUP = "pickup"
DROPOFF = "dropoff"


@dataclass(frozen=True)
class Task:
    """One pickup-then-dropoff job, with the schedule the planner expected."""

    origin: int
    destination: int
    taxi_arrival: int
    passenger_ready: int
    depart: int
    passenger_id: int


@dataclass(frozen=True)
class TraceEvent:
    time: int
    taxi: int
    passenger: int
    kind: str


@dataclass
class TaxiRuntime:
    id: int
    heading: int          # zone the taxi is moving toward (its own zone when idle)
    arrive_at: int        # instant it reaches `heading`; past or present when idle
    queue: list[Task] = field(default_factory=list)

    @property
    def idle(self) -> bool:
        return not self.queue

    def clone(self) -> "TaxiRuntime":
        return TaxiRuntime(self.id, self.heading, self.arrive_at, list(self.queue))


@dataclass(frozen=True)
class VehicleView:
    """Where and when a taxi next becomes free, per forward queue simulation."""

    taxi_id: int
    zone: int
    free_at: int


@dataclass(frozen=True)
class DynContext:
    """What the dispatcher sees at one instant: fleet states plus open demand."""

    clock: int
    vehicles: tuple[VehicleView, ...]
    requests: tuple  # pending PassengerRequest, visible (request_time <= clock)


@dataclass
class SimState:
    clock: int
    taxis: list[TaxiRuntime]
    pending: dict  # passenger id -> PassengerRequest, not yet queued or served
    served: dict   # passenger id -> (pickup_time, dropoff_time)
    events: list
    scenario: Scenario
    matrix: TravelTimeMatrix

    def copy(self) -> "SimState":
        return SimState(
            clock=self.clock,
            taxis=[t.clone() for t in self.taxis],
            pending=dict(self.pending),
            served=dict(self.served),
            events=list(self.events),
            scenario=self.scenario,
            matrix=self.matrix,
        )

    @property
    def all_served(self) -> bool:
        return not self.pending and all(t.idle for t in self.taxis)


@dataclass(frozen=True)
class SimTrace:
    scenario_ref: str
    events: tuple[TraceEvent, ...]
    final_clock: int
    served: dict

    def complete(self, scenario: Scenario) -> bool:
        return len(self.served) == scenario.spec.passengers


def init(scenario: Scenario, matrix: TravelTimeMatrix) -> SimState:
    """Fresh state: clock 0, all taxis idle at start zones, all requests open."""
    taxis = [
        TaxiRuntime(id=t.id, heading=t.start_zone, arrive_at=t.available_at)
        for t in scenario.fleet
    ]
    return SimState(
        clock=0,
        taxis=taxis,
        pending={r.id: r for r in scenario.requests},
        served={},
        events=[],
        scenario=scenario,
        matrix=matrix,
    )


def _process_instant(state: SimState, k: int) -> None:
    """Fire every transition scheduled for instant k, per taxi, to quiescence."""
    for taxi in state.taxis:
        while taxi.queue and taxi.arrive_at == k:
            head = taxi.queue[0]
            if taxi.heading == head.origin:
                # Arrived at the pickup point; board no earlier than the request.
                depart = max(k, head.passenger_ready)
                state.events.append(TraceEvent(depart, taxi.id, head.passenger_id, PICKUP))
                taxi.heading = head.destination
                taxi.arrive_at = depart + state.matrix.time(head.origin, head.destination)
            elif taxi.heading == head.destination:
                state.events.append(TraceEvent(k, taxi.id, head.passenger_id, DROPOFF))
                pickup_t = taxi.arrive_at - state.matrix.time(head.origin, head.destination)
                state.served[head.passenger_id] = (pickup_t, k)
                taxi.queue.pop(0)
                if taxi.queue:
                    nxt = taxi.queue[0]
                    taxi.arrive_at = k + state.matrix.time(head.destination, nxt.origin)
                    taxi.heading = nxt.origin
                # else: idle at the destination of the last task
            else:
                raise InternalError(
                    f"taxi {taxi.id} heading {taxi.heading} matches neither endpoint "
                    f"of task for passenger {head.passenger_id}"
                )


def step(state: SimState, dt: int) -> SimState:
    """Advance ``dt`` seconds in unit ticks, returning a new state.

    Instants [clock, clock + dt) are processed; the new clock's own instant is
    handled by the next call, which makes step(a) then step(b) identical to
    step(a + b).
    """
    if dt < 1:
        raise CommandError(f"dt must be >= 1, got {dt}")
    out = state.copy()
    for k in range(out.clock, out.clock + dt):
        _process_instant(out, k)
    out.clock = state.clock + dt
    return out


def run_until_drained(state: SimState, dt: int = 60, hard_cap: int = 10_000_000) -> SimState:
    """Step until every queue is empty and nothing is pending. No new commands."""
    out = state
    while not out.all_served:
        if out.pending:
            raise CommandError(
                f"cannot drain: passengers {sorted(out.pending)} were never assigned"
            )
        out = step(out, dt)
        if out.clock > hard_cap:
            raise InternalError("simulation failed to drain before the hard cap")
    return out


def merge_commands(state: SimState, plan: dict[int, list[Task]]) -> SimState:
    """Merge a per-taxi task plan into the state.

    Idle taxis adopt the new queue and start driving toward the first origin
    immediately; busy taxis append behind their current tasks. Only pending
    passengers may appear, each at most once across the whole plan.
    """
    seen: set[int] = set()
    for taxi_id, tasks in plan.items():
        for task in tasks:
            if task.passenger_id in seen:
                raise CommandError(f"passenger {task.passenger_id} planned twice")
            if task.passenger_id not in state.pending:
                raise CommandError(f"passenger {task.passenger_id} is not pending")
            seen.add(task.passenger_id)

    out = state.copy()
    by_id = {t.id: t for t in out.taxis}
    for taxi_id, tasks in plan.items():
        if taxi_id not in by_id:
            raise CommandError(f"unknown taxi {taxi_id}")
        if not tasks:
            continue
        taxi = by_id[taxi_id]
        if taxi.idle:
            start = max(out.clock, taxi.arrive_at)  # honor a not-yet-available taxi
            taxi.queue = list(tasks)
            taxi.arrive_at = start + out.matrix.time(taxi.heading, tasks[0].origin)
            taxi.heading = tasks[0].origin
        else:
            taxi.queue.extend(tasks)
        for task in tasks:
            del out.pending[task.passenger_id]
    return out


def vehicle_view(taxi: TaxiRuntime, clock: int, matrix: TravelTimeMatrix) -> VehicleView:
    """Next-free (zone, time) of one taxi by simulating its queue forward."""
    if taxi.idle:
        return VehicleView(taxi.id, taxi.heading, max(clock, taxi.arrive_at))
    t = taxi.arrive_at
    pos = taxi.heading
    queue = taxi.queue
    start_idx = 0
    head = queue[0]
    if pos == head.origin:
        depart = max(t, head.passenger_ready)
        t = depart + matrix.time(head.origin, head.destination)
        pos = head.destination
        start_idx = 1
    elif pos == head.destination:
        pos = head.destination
        start_idx = 1
    else:
        raise InternalError(f"taxi {taxi.id} heading matches neither endpoint of its head task")
    for task in queue[start_idx:]:
        arrive = t + matrix.time(pos, task.origin)
        depart = max(arrive, task.passenger_ready)
        t = depart + matrix.time(task.origin, task.destination)
        pos = task.destination
    return VehicleView(taxi.id, pos, t)


def snapshot(state: SimState) -> DynContext:
    """The dispatcher-visible context: fleet next-free states and open demand.

    Only requests already made (request_time <= clock) are visible.
    """
    vehicles = tuple(vehicle_view(t, state.clock, state.matrix) for t in state.taxis)
    visible = tuple(
        r for r in sorted(state.pending.values(), key=lambda r: r.id)
        if r.request_time <= state.clock
    )
    return DynContext(clock=state.clock, vehicles=vehicles, requests=visible)


def clairvoyant_snapshot(state: SimState) -> DynContext:
    """Like snapshot() but with every pending request visible regardless of
    its request time; used for static whole-instance studies."""
    vehicles = tuple(vehicle_view(t, state.clock, state.matrix) for t in state.taxis)
    visible = tuple(sorted(state.pending.values(), key=lambda r: r.id))
    return DynContext(clock=state.clock, vehicles=vehicles, requests=visible)


def finalize_trace(state: SimState) -> SimTrace:
    """Time-ordered trace of the run so far."""
    events = tuple(sorted(state.events, key=lambda e: (e.time, e.taxi, e.kind != PICKUP)))
    return SimTrace(
        scenario_ref=state.scenario.matrix_ref,
        events=events,
        final_clock=state.clock,
        served=dict(state.served),
    )


def trace_to_jsonl(trace: SimTrace) -> str:
    import json

    lines = [
        json.dumps({"t": e.time, "taxi": e.taxi, "pass": e.passenger, "kind": e.kind})
        for e in trace.events
    ]
    return "\n".join(lines) + ("\n" if lines else "")
