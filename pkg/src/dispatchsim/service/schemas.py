"""Request and response models for the dispatch service."""
from __future__ import annotations

from pydantic import BaseModel, Field

Matrix = list[list[float]]


class ScenarioSpecModel(BaseModel):
    passengers: int
    taxis: int
    window: int
    seed: int = 0


class RequestModel(BaseModel):
    id: int
    origin: int
    destination: int
    request_time: int


class TaxiModel(BaseModel):
    id: int
    start_zone: int
    available_at: int = 0


class ScenarioModel(BaseModel):
    spec: ScenarioSpecModel
    requests: list[RequestModel]
    fleet: list[TaxiModel]
    matrix_ref: str = "<memory>"


class ParseNameRequest(BaseModel):
    name: str


class GenerateRequest(BaseModel):
    name: str | None = None
    spec: ScenarioSpecModel | None = None
    seed: int | None = None
    matrix: Matrix
    freq: Matrix


class ObjectiveSelector(BaseModel):
    """Either a builtin name or a full objective document."""

    builtin: str | None = None
    document: dict | None = None


class GeneratorConfigModel(BaseModel):
    mode: str = "mock"
    endpoint_url: str = ""
    model_name: str = "default-model"
    temperature: float = 0.9
    max_retries: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.5
    mock_invalid_rate: float = 0.0
    mock_seed: int = 0


class RunRequest(BaseModel):
    scenario: ScenarioModel
    matrix: Matrix
    objective: ObjectiveSelector = Field(default_factory=ObjectiveSelector)
    dt: int = 300
    bin_seconds: int = 600


class HeatmapCell(BaseModel):
    zone: int
    bin: int
    mean_delay_min: float
    count: int


class PassengerDelayModel(BaseModel):
    id: int
    delay_s: int
    origin: int
    bin: int


class MetricsModel(BaseModel):
    scenario: str
    objective: str
    bin_seconds: int
    mean_wait_min: float
    error_rate: float
    per_passenger: list[PassengerDelayModel]
    heatmap: list[HeatmapCell]


class TraceEventModel(BaseModel):
    t: int
    taxi: int
    passenger: int
    kind: str


class RunResponse(BaseModel):
    metrics: MetricsModel
    trace: list[TraceEventModel]


class HsParamsModel(BaseModel):
    hmcr: float = 0.9
    par: float = 0.2
    pop_size: int = 5
    iterations: int = 10
    rng_seed: int = 0


class EvolveRequest(BaseModel):
    scenario: ScenarioModel
    matrix: Matrix
    hs: HsParamsModel = Field(default_factory=HsParamsModel)
    generator: GeneratorConfigModel = Field(default_factory=GeneratorConfigModel)
    mode: str = "closed_loop"
    dt: int = 300
    bin_seconds: int = 600
    workers: int = 1


class IterationModel(BaseModel):
    best: float
    mean: float
    error_rate: float


class EvolveResponse(BaseModel):
    mode: str
    iterations: list[IterationModel]
    best_fitness: float
    best_condensed: str
    best_objectives: list[dict]
    total_queries: int
    total_errors: int
    error_rate: float


class OracleRequest(BaseModel):
    scenario: ScenarioModel
    matrix: Matrix
    max_passengers: int = 5
    max_taxis: int = 3
    objective: ObjectiveSelector = Field(default_factory=ObjectiveSelector)


class OracleResponse(BaseModel):
    oracle_wait_s: int
    hierarchical_wait_s: int
    ratio: float
    mean_relative_gap: float


class ReportEntry(BaseModel):
    method: str
    scenario: str
    mean_wait_min: float
    bin_seconds: int


class ReportRequest(BaseModel):
    entries: list[ReportEntry]


class ReportResponse(BaseModel):
    methods: list[str]
    scenarios: list[str]
    table: list[list[float | None]]
    csv: str


class HealthResponse(BaseModel):
    status: str
    version: str
