"""FastAPI service wrapping the dispatch engine.

Endpoints are stateless: every request carries its inputs (matrices inline as
row lists) and every response carries the full result, so clients own all
file I/O and runs stay reproducible wherever they execute.
"""
from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..engine import FixedObjectiveProvider, run_episode
from ..errors import InputError, InternalError
from ..evolution import HsParams, run_evolution
from ..holistic import hierarchical_pipeline, solve_holistic
from ..llm import GeneratorClient, GeneratorConfig
from ..network import (
    OdFrequency,
    Scenario,
    TravelTimeMatrix,
    generate_scenario,
    parse_scenario_name,
    scenario_from_dict,
    scenario_to_dict,
)
from ..objectives import ObjectiveSpec, builtin, parse_dict
from ..simulator import clairvoyant_snapshot, init
from . import schemas


def _matrix(rows) -> TravelTimeMatrix:
    return TravelTimeMatrix(rows)


def _scenario(model: schemas.ScenarioModel) -> Scenario:
    return scenario_from_dict(model.model_dump())


def _objective(selector: schemas.ObjectiveSelector) -> tuple[ObjectiveSpec, str]:
    if selector.builtin and selector.document:
        raise InputError("give either a builtin objective name or a document, not both")
    if selector.document is not None:
        return parse_dict(selector.document), "custom"
    name = selector.builtin or "default_composite"
    return builtin(name), name


def create_app() -> FastAPI:
    app = FastAPI(title="dispatchsim", version=__version__)

    @app.exception_handler(InputError)
    async def input_error_handler(request, exc):  # pragma: no cover - thin glue
        raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/scenario/parse-name", response_model=schemas.ScenarioSpecModel)
    def parse_name(req: schemas.ParseNameRequest):
        try:
            spec = parse_scenario_name(req.name)
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return schemas.ScenarioSpecModel(
            passengers=spec.passengers, taxis=spec.taxis, window=spec.window, seed=spec.seed
        )

    @app.post("/scenario/generate", response_model=schemas.ScenarioModel)
    def generate(req: schemas.GenerateRequest):
        try:
            if req.spec is not None:
                spec = req.spec
            elif req.name is not None:
                parsed = parse_scenario_name(req.name)
                spec = schemas.ScenarioSpecModel(
                    passengers=parsed.passengers, taxis=parsed.taxis, window=parsed.window
                )
            else:
                raise InputError("need a scenario name or an explicit spec")
            from ..network import ScenarioSpec

            seed = req.seed if req.seed is not None else spec.seed
            scen_spec = ScenarioSpec(
                passengers=spec.passengers, taxis=spec.taxis, window=spec.window, seed=seed
            )
            matrix = _matrix(req.matrix)
            freq = OdFrequency(req.freq)
            scenario = generate_scenario(scen_spec, freq, matrix)
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return schemas.ScenarioModel(**scenario_to_dict(scenario))

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        try:
            matrix = _matrix(req.matrix)
            scenario = _scenario(req.scenario)
            spec, label = _objective(req.objective)
            provider = FixedObjectiveProvider(spec)
            result = run_episode(
                scenario, matrix, provider, dt=req.dt, bin_seconds=req.bin_seconds
            )
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except InternalError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        metrics_doc = result.metrics.to_dict(scenario_name=scenario.spec.name, objective=label)
        return schemas.RunResponse(
            metrics=schemas.MetricsModel(**metrics_doc),
            trace=[
                schemas.TraceEventModel(t=e.time, taxi=e.taxi, passenger=e.passenger, kind=e.kind)
                for e in result.trace.events
            ],
        )

    @app.post("/evolve", response_model=schemas.EvolveResponse)
    def evolve(req: schemas.EvolveRequest):
        try:
            matrix = _matrix(req.matrix)
            scenario = _scenario(req.scenario)
            params = HsParams(
                hmcr=req.hs.hmcr,
                par=req.hs.par,
                pop_size=req.hs.pop_size,
                iterations=req.hs.iterations,
                rng_seed=req.hs.rng_seed,
            )
            client = GeneratorClient(GeneratorConfig(**req.generator.model_dump()))
            report = run_evolution(
                scenario,
                matrix,
                params,
                client,
                mode=req.mode,
                dt=req.dt,
                bin_seconds=req.bin_seconds,
                workers=req.workers,
            )
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except InternalError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        doc = report.to_dict()
        return schemas.EvolveResponse(
            mode=doc["mode"],
            iterations=[schemas.IterationModel(**it) for it in doc["iterations"]],
            best_fitness=doc["best_fitness"],
            best_condensed=doc["best_condensed"],
            best_objectives=_condensed_objectives(doc["best_condensed"]),
            total_queries=doc["total_queries"],
            total_errors=doc["total_errors"],
            error_rate=doc["error_rate"],
        )

    @app.post("/oracle", response_model=schemas.OracleResponse)
    def oracle(req: schemas.OracleRequest):
        try:
            matrix = _matrix(req.matrix)
            scenario = _scenario(req.scenario)
            spec, _ = _objective(req.objective)
            snap = clairvoyant_snapshot(init(scenario, matrix))
            best = solve_holistic(
                snap, matrix, max_passengers=req.max_passengers, max_taxis=req.max_taxis
            )
            hier = hierarchical_pipeline(snap, matrix, spec)
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        denom = max(best.total_wait, 1)
        return schemas.OracleResponse(
            oracle_wait_s=best.total_wait,
            hierarchical_wait_s=hier.total_wait,
            ratio=hier.total_wait / denom,
            mean_relative_gap=(hier.total_wait - best.total_wait) / denom,
        )

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        if not req.entries:
            raise HTTPException(status_code=400, detail="no metrics entries given")
        bins = {e.bin_seconds for e in req.entries}
        if len(bins) > 1:
            raise HTTPException(
                status_code=400, detail=f"refusing to mix bin sizes: {sorted(bins)}"
            )
        methods = sorted({e.method for e in req.entries})
        scenarios = sorted({e.scenario for e in req.entries})
        cells: dict[tuple[str, str], float] = {}
        for e in req.entries:
            cells[(e.method, e.scenario)] = e.mean_wait_min
        table = [
            [cells.get((m, s)) for s in scenarios]
            for m in methods
        ]
        lines = ["method," + ",".join(scenarios)]
        for m, row in zip(methods, table):
            cells_txt = ",".join("" if v is None else f"{v:.4f}" for v in row)
            lines.append(f"{m},{cells_txt}")
        return schemas.ReportResponse(
            methods=methods, scenarios=scenarios, table=table, csv="\n".join(lines) + "\n"
        )

    return app


def _condensed_objectives(condensed: str) -> list[dict]:
    docs = []
    for line in condensed.splitlines():
        if line.startswith("objective "):
            docs.append(json.loads(line.split(": ", 1)[1]))
    return docs
