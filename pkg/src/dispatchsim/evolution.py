"""Harmony-search evolution over objective-generating prompt plans.

A plan assigns one prompt operator to each in-window decision epoch: draw
alpha uniformly; above the memory-consideration rate the epoch explores with
a fresh-objective prompt, otherwise an elite parent is selected by rank and
the pitch-adjustment rate picks between refining it and reinventing from it.
Each plan is evaluated by one full simulated episode; its fitness is the mean
passenger wait in minutes. Populations merge-sort-truncate per iteration, so
the best fitness never regresses.
"""
from __future__ import annotations

import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .engine import (
    CLOSED_LOOP,
    OPEN_LOOP,
    EpisodeResult,
    GeneratedObjectiveProvider,
    PlanStep,
    run_episode,
)
from .errors import InputError
from .llm import GeneratorClient, OperatorKind, build_bundle
from .network import Scenario, TravelTimeMatrix
from .objectives import ObjectiveSpec, builtin, parse, serialize
from .sequencing import SEQ_EXACT_LIMIT

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HsParams:
    hmcr: float = 0.9
    par: float = 0.2
    pop_size: int = 5
    iterations: int = 10
    steps: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.hmcr <= 1.0 and 0.0 <= self.par <= 1.0):
            raise InputError("hmcr and par must be probabilities")
        if self.pop_size < 1 or self.iterations < 1 or self.steps < 1:
            raise InputError("pop_size, iterations and steps must be >= 1")


@dataclass(frozen=True)
class Individual:
    """One evaluated plan: its per-epoch query records and scalar fitness."""

    id: int
    per_step: tuple  # StepRecord per in-window epoch
    fitness: float
    queries: int
    errors: int


def generate_plan(
    pop: list[Individual],
    params: HsParams,
    rng: random.Random,
    bootstrap_ok: bool = False,
) -> list[PlanStep]:
    """One operator choice per decision epoch (Pi-transition + pitch draw)."""
    plan: list[PlanStep] = []
    warned = False
    for _ in range(params.steps):
        if not pop:
            if params.hmcr > 0 and not bootstrap_ok and not warned:
                log.warning("empty population outside bootstrap; falling back to random operator")
                warned = True
            plan.append(PlanStep(OperatorKind.RANDOM))
            continue
        alpha = rng.random()
        if alpha > params.hmcr:
            plan.append(PlanStep(OperatorKind.RANDOM))
        else:
            parent = select_individual(pop, rng)
            kind = OperatorKind.REFINE if rng.random() < params.par else OperatorKind.REINVENT
            plan.append(PlanStep(kind, parent_text=token_select(parent), parent_id=parent.id))
    return plan


def select_individual(pop: list[Individual], rng: random.Random) -> Individual:
    """Rank-based parent selection: rank r (0 best) gets weight n - r."""
    if not pop:
        raise InputError("cannot select from an empty population")
    n = len(pop)
    weights = [n - r for r in range(n)]
    return rng.choices(pop, weights=weights, k=1)[0]


def token_select(ind: Individual) -> str:
    """Condensed parent text: the objectives plus the fitness, nothing else."""
    lines = [
        f"objective {i + 1}: {serialize(rec.objective)}"
        for i, rec in enumerate(ind.per_step)
    ]
    lines.append(f"fitness: {ind.fitness:.4f} min mean wait")
    return "\n".join(lines)


def parse_condensed(text: str) -> tuple[list[ObjectiveSpec], float]:
    """Inverse of token_select, for round-trip checks and audits."""
    specs: list[ObjectiveSpec] = []
    fitness = math.nan
    for line in text.splitlines():
        if line.startswith("objective "):
            specs.append(parse(line.split(": ", 1)[1]))
        elif line.startswith("fitness: "):
            fitness = float(line.split()[1])
    return specs, fitness


def update_population(
    pop: list[Individual], fresh: list[Individual], n: int
) -> list[Individual]:
    """Merge, sort ascending by fitness (stable, incumbents first), keep n."""
    merged = list(pop) + list(fresh)
    merged.sort(key=lambda ind: ind.fitness)
    return merged[:n]


@dataclass(frozen=True)
class IterationStats:
    best: float
    mean: float
    error_rate: float


@dataclass
class EvolutionReport:
    mode: str
    iterations: list[IterationStats]
    best_fitness: float
    best_condensed: str
    total_queries: int
    total_errors: int
    episodes: list[EpisodeResult]

    @property
    def error_rate(self) -> float:
        return self.total_errors / self.total_queries if self.total_queries else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": [
                {"best": it.best, "mean": it.mean, "error_rate": it.error_rate}
                for it in self.iterations
            ],
            "best_fitness": self.best_fitness,
            "best_condensed": self.best_condensed,
            "total_queries": self.total_queries,
            "total_errors": self.total_errors,
            "error_rate": self.error_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_evolution(
    scenario: Scenario,
    matrix: TravelTimeMatrix,
    params: HsParams,
    client: GeneratorClient,
    mode: str = CLOSED_LOOP,
    dt: int = 300,
    bin_seconds: int = 600,
    seq_limit: int = SEQ_EXACT_LIMIT,
    workers: int = 1,
) -> EvolutionReport:
    """Full loop: per iteration, evaluate pop_size fresh plans and keep the
    best pop_size individuals of old plus new."""
    if mode not in (OPEN_LOOP, CLOSED_LOOP):
        raise InputError(f"mode must be {OPEN_LOOP} or {CLOSED_LOOP}")
    epochs = max(1, math.ceil(scenario.spec.window / dt))
    params = replace(params, steps=epochs)
    rng = random.Random(params.rng_seed)
    bundle = build_bundle(matrix)
    default_spec = builtin("default_composite")

    pop: list[Individual] = []
    stats: list[IterationStats] = []
    episodes: list[EpisodeResult] = []
    total_queries = total_errors = 0
    next_id = 0

    def evaluate_plan(plan: list[PlanStep]) -> EpisodeResult:
        provider = GeneratedObjectiveProvider(
            client, bundle, plan, mode=mode, window=scenario.spec.window,
            default_spec=default_spec,
        )
        return run_episode(
            scenario, matrix, provider, dt=dt, bin_seconds=bin_seconds, seq_limit=seq_limit
        )

    for iteration in range(params.iterations):
        plans = [
            generate_plan(pop, params, rng, bootstrap_ok=(iteration == 0))
            for _ in range(params.pop_size)
        ]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(evaluate_plan, plans))
        else:
            results = [evaluate_plan(plan) for plan in plans]

        fresh: list[Individual] = []
        iter_queries = iter_errors = 0
        for result in results:
            fresh.append(
                Individual(
                    id=next_id,
                    per_step=tuple(result.records),
                    fitness=result.metrics.mean_wait_min,
                    queries=result.queries,
                    errors=result.errors,
                )
            )
            next_id += 1
            iter_queries += result.queries
            iter_errors += result.errors
            episodes.append(result)

        pop = update_population(pop, fresh, params.pop_size)
        total_queries += iter_queries
        total_errors += iter_errors
        stats.append(
            IterationStats(
                best=pop[0].fitness,
                mean=sum(ind.fitness for ind in pop) / len(pop),
                error_rate=iter_errors / iter_queries if iter_queries else 0.0,
            )
        )

    return EvolutionReport(
        mode=mode,
        iterations=stats,
        best_fitness=pop[0].fitness,
        best_condensed=token_select(pop[0]),
        total_queries=total_queries,
        total_errors=total_errors,
        episodes=episodes,
    )
