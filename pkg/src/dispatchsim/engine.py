"""Closed-loop dispatch execution.

One episode runs a scenario to completion: at every decision epoch it
snapshots the state, obtains an assignment objective from its provider,
assigns all visible pending passengers, sequences each taxi's new passengers
exactly (greedy beyond the exact limit), merges the commands, and advances
the clock by the epoch interval. Epochs continue past the request window
until every passenger is served; providers only issue generator queries for
epochs inside the window, which pins the per-run query count.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import assignment as assign
from . import simulator as sim
from .errors import InternalError
from .llm import GeneratorClient, OperatorKind, PromptBundle, compose_prompt, dyn_block, extract_objective
from .errors import ExtractionError, TransportError
from .metrics import Metrics, collect_metrics
from .network import Scenario, TravelTimeMatrix
from .objectives import ObjectiveSpec, builtin
from .sequencing import SEQ_EXACT_LIMIT, sequence_for_engine

DEFAULT_DT = 300
DEFAULT_BINS = 600

OPEN_LOOP = "open_loop"
CLOSED_LOOP = "closed_loop"


@dataclass(frozen=True)
class StepRecord:
    """What one generator query produced at one decision epoch."""

    epoch: int
    snapshot_digest: str
    objective: ObjectiveSpec
    raw_response: str
    source: str  # generated | default


def snapshot_digest(snap) -> str:
    return hashlib.sha256(dyn_block(snap).encode("utf-8")).hexdigest()[:16]


class FixedObjectiveProvider:
    """Always the same objective; never queries anything."""

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self.queries = 0
        self.errors = 0
        self.records: list[StepRecord] = []

    def objective_for(self, epoch: int, clock: int, snap) -> ObjectiveSpec:
        return self.spec


@dataclass(frozen=True)
class PlanStep:
    kind: OperatorKind
    parent_text: str | None = None
    parent_id: int | None = None


class GeneratedObjectiveProvider:
    """Objectives from a generator, one query per in-window epoch.

    Closed loop queries at every epoch whose clock is inside the request
    window and reuses the latest objective during the drain phase; open loop
    queries once at the first epoch and reuses that objective throughout.
    Transport failures and unusable responses fall back to the default
    composite objective and are counted as error events.
    """

    def __init__(
        self,
        client: GeneratorClient,
        bundle: PromptBundle,
        plan: list[PlanStep],
        mode: str = CLOSED_LOOP,
        window: int = 0,
        default_spec: ObjectiveSpec | None = None,
    ):
        if mode not in (OPEN_LOOP, CLOSED_LOOP):
            raise InternalError(f"unknown loop mode {mode!r}")
        self.client = client
        self.bundle = bundle
        self.plan = plan
        self.mode = mode
        self.window = window
        self.default_spec = default_spec or builtin("default_composite")
        self.current: ObjectiveSpec | None = None
        self.queries = 0
        self.errors = 0
        self.records: list[StepRecord] = []

    def objective_for(self, epoch: int, clock: int, snap) -> ObjectiveSpec:
        if self.mode == OPEN_LOOP:
            should_query = self.current is None
        else:
            should_query = clock < self.window
        if not should_query:
            return self.current if self.current is not None else self.default_spec

        step = self.plan[min(epoch, len(self.plan) - 1)] if self.plan else PlanStep(OperatorKind.RANDOM)
        prompt = compose_prompt(self.bundle, step.kind, snap, step.parent_text)
        self.queries += 1
        try:
            raw = self.client.complete(prompt)
        except TransportError as exc:
            raw = f"<transport failure: {exc}>"
            spec, source = self.default_spec, "default"
            self.errors += 1
        else:
            try:
                spec, source = extract_objective(raw), "generated"
            except ExtractionError:
                spec, source = self.default_spec, "default"
                self.errors += 1
        self.records.append(StepRecord(epoch, snapshot_digest(snap), spec, raw, source))
        self.current = spec
        return spec


@dataclass
class EpisodeResult:
    trace: sim.SimTrace
    metrics: Metrics
    final_state: sim.SimState
    queries: int
    errors: int
    records: list


def run_episode(
    scenario: Scenario,
    matrix: TravelTimeMatrix,
    provider,
    dt: int = DEFAULT_DT,
    bin_seconds: int = DEFAULT_BINS,
    seq_limit: int = SEQ_EXACT_LIMIT,
    budget_ms: int = 200,
    max_epochs: int = 100_000,
) -> EpisodeResult:
    """Run one scenario to completion under the provider's objectives."""
    state = sim.init(scenario, matrix)
    epoch = 0
    while True:
        snap = sim.snapshot(state)
        spec = provider.objective_for(epoch, state.clock, snap)
        if snap.requests:
            y = assign.solve(spec, snap, matrix, budget_ms=budget_ms)
            by_taxi: dict[int, list] = {}
            for req in snap.requests:
                by_taxi.setdefault(y[req.id], []).append(req)
            veh = {v.taxi_id: v for v in snap.vehicles}
            plan = {}
            for taxi_id in sorted(by_taxi):
                route = sequence_for_engine(veh[taxi_id], by_taxi[taxi_id], matrix, limit=seq_limit)
                reqs = {r.id: r for r in by_taxi[taxi_id]}
                plan[taxi_id] = route.to_tasks(reqs)
            state = sim.merge_commands(state, plan)
        if state.all_served and state.clock >= scenario.spec.window:
            break
        state = sim.step(state, dt)
        epoch += 1
        if epoch > max_epochs:
            raise InternalError("dispatch loop failed to finish; check travel matrix")

    trace = sim.finalize_trace(state)
    error_rate = provider.errors / provider.queries if provider.queries else 0.0
    metrics = collect_metrics(trace, scenario, bin_seconds=bin_seconds, error_rate=error_rate)
    return EpisodeResult(
        trace=trace,
        metrics=metrics,
        final_state=state,
        queries=provider.queries,
        errors=provider.errors,
        records=list(provider.records),
    )
