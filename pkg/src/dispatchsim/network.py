"""Zone graph, matrix ingestion, and stochastic scenario generation.

The only geometry the system knows is a dense zone-to-zone travel-time table.
Demand is described by a same-shaped table of empirical OD-pair weights;
scenarios are sampled from it with a seeded generator so that every scenario
is reproducible bit-for-bit.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import InputError, MatrixFormatError, ScenarioNameError

_NAME_RE = re.compile(r"^P(\d+)_C(\d+)_T(\d+)$")


class TravelTimeMatrix:
    """Dense square table of zone-to-zone travel durations in whole seconds."""

    def __init__(self, tr: np.ndarray, ref: str = "<memory>"):
        tr = np.asarray(tr)
        if tr.ndim != 2 or tr.shape[0] != tr.shape[1]:
            raise MatrixFormatError(f"travel matrix must be square, got shape {tr.shape}")
        if not np.all(np.isfinite(tr)):
            raise MatrixFormatError("travel matrix contains non-finite entries")
        if np.any(tr < 0):
            raise MatrixFormatError("travel matrix contains negative durations")
        if np.any(np.diagonal(tr) != 0):
            raise MatrixFormatError("travel matrix diagonal must be zero")
        self.tr = np.rint(tr).astype(np.int64)
        self.ref = ref

    @property
    def zone_count(self) -> int:
        return self.tr.shape[0]

    def time(self, i: int, j: int) -> int:
        return int(self.tr[i, j])

    def rows(self) -> list[list[int]]:
        return self.tr.tolist()


class OdFrequency:
    """Raw (unnormalized) origin-destination trip weights, one cell per pair."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise MatrixFormatError(f"OD table must be square, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise MatrixFormatError("OD table contains non-finite entries")
        if np.any(weights < 0):
            raise MatrixFormatError("OD table contains negative weights")
        if not np.any(weights > 0):
            raise MatrixFormatError("OD table is all-zero")
        self.weights = weights

    @property
    def zone_count(self) -> int:
        return self.weights.shape[0]

    def rows(self) -> list[list[float]]:
        return self.weights.tolist()


@dataclass(frozen=True)
class ScenarioSpec:
    """Size of a scenario: P requests, C taxis, a T-second request window."""

    passengers: int
    taxis: int
    window: int
    seed: int = 0

    def __post_init__(self):
        if self.passengers < 1 or self.taxis < 1 or self.window < 1:
            raise InputError(
                f"scenario sizes must be positive, got P={self.passengers} "
                f"C={self.taxis} T={self.window}"
            )

    @property
    def name(self) -> str:
        return format_scenario_name(self)


@dataclass(frozen=True)
class PassengerRequest:
    id: int
    origin: int
    destination: int
    request_time: int


@dataclass(frozen=True)
class TaxiInit:
    id: int
    start_zone: int
    available_at: int = 0


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    requests: tuple[PassengerRequest, ...]
    fleet: tuple[TaxiInit, ...]
    matrix_ref: str = "<memory>"

    def __post_init__(self):
        if len(self.requests) != self.spec.passengers:
            raise InputError("request count does not match spec")
        if len(self.fleet) != self.spec.taxis:
            raise InputError("fleet size does not match spec")
        times = [r.request_time for r in self.requests]
        if times != sorted(times):
            raise InputError("requests must be sorted by request time")


def _read_csv_table(path) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(cell) for cell in line.split(",")])
            except ValueError as exc:
                raise MatrixFormatError(f"{path}:{lineno}: unparseable cell ({exc})") from exc
    if not rows:
        raise MatrixFormatError(f"{path}: empty file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MatrixFormatError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)


def load_travel_matrix(path) -> TravelTimeMatrix:
    """Read a comma-separated, headerless, row-major travel-time table."""
    return TravelTimeMatrix(_read_csv_table(path), ref=str(path))


def load_od_frequency(path, matrix: TravelTimeMatrix | None = None) -> OdFrequency:
    """Read an OD weight table; shape must match ``matrix`` when given."""
    freq = OdFrequency(_read_csv_table(path))
    if matrix is not None and freq.zone_count != matrix.zone_count:
        raise MatrixFormatError(
            f"OD table is {freq.zone_count}x{freq.zone_count} but travel matrix "
            f"is {matrix.zone_count}x{matrix.zone_count}"
        )
    return freq


def parse_scenario_name(name: str) -> ScenarioSpec:
    """Parse a P<int>_C<int>_T<int> scenario name; seed defaults to 0."""
    m = _NAME_RE.match(name)
    if not m:
        raise ScenarioNameError(f"bad scenario name {name!r}, expected P<int>_C<int>_T<int>")
    return ScenarioSpec(passengers=int(m.group(1)), taxis=int(m.group(2)), window=int(m.group(3)))


def format_scenario_name(spec: ScenarioSpec) -> str:
    return f"P{spec.passengers}_C{spec.taxis}_T{spec.window}"


def generate_scenario(
    spec: ScenarioSpec, freq: OdFrequency, matrix: TravelTimeMatrix
) -> Scenario:
    """Sample a scenario from the OD weight table.

    OD pairs are drawn proportional to the weights with the diagonal excluded,
    request times are i.i.d. uniform integers on [0, window] sorted ascending,
    and taxi start zones follow the origin marginals of the weights. The whole
    draw is a pure function of (spec, freq, matrix).

    Uniform request times are an assumption: intraday demand profiles are not
    modeled. Feed multiple scenarios with different windows to approximate
    time-of-day structure.
    """
    n = matrix.zone_count
    if freq.zone_count != n:
        raise InputError("OD table and travel matrix shapes disagree")

    weights = freq.weights.copy()
    np.fill_diagonal(weights, 0.0)
    total = weights.sum()
    if total <= 0:
        raise InputError("OD table has no off-diagonal support")

    rng = np.random.default_rng(spec.seed)
    flat_p = (weights / total).ravel()
    pair_idx = rng.choice(n * n, size=spec.passengers, p=flat_p)
    times = np.sort(rng.integers(0, spec.window + 1, size=spec.passengers))

    requests = tuple(
        PassengerRequest(
            id=k,
            origin=int(pair_idx[k] // n),
            destination=int(pair_idx[k] % n),
            request_time=int(times[k]),
        )
        for k in range(spec.passengers)
    )

    row_marg = weights.sum(axis=1)
    row_p = row_marg / row_marg.sum()
    starts = rng.choice(n, size=spec.taxis, p=row_p)
    fleet = tuple(TaxiInit(id=v, start_zone=int(starts[v])) for v in range(spec.taxis))

    return Scenario(spec=spec, requests=requests, fleet=fleet, matrix_ref=matrix.ref)


def synthetic_inputs(zone_count: int, seed: int = 0) -> tuple[TravelTimeMatrix, OdFrequency]:
    """Build a synthetic zone grid with hotspot demand, for demos and tests.

    Zones sit on a rough square grid with 60 s per grid step; a handful of
    hotspot OD pairs carry most of the demand weight.
    """
    if zone_count < 2:
        raise InputError("need at least two zones")
    side = int(np.ceil(np.sqrt(zone_count)))
    coords = [(z % side, z // side) for z in range(zone_count)]
    tr = np.zeros((zone_count, zone_count), dtype=np.int64)
    for i, (xi, yi) in enumerate(coords):
        for j, (xj, yj) in enumerate(coords):
            tr[i, j] = 60 * (abs(xi - xj) + abs(yi - yj))

    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.2, 1.0, size=(zone_count, zone_count))
    np.fill_diagonal(weights, 0.0)
    hot = rng.choice(zone_count, size=min(4, zone_count), replace=False)
    for a in hot:
        for b in hot:
            if a != b:
                weights[a, b] += 8.0
    return TravelTimeMatrix(tr, ref=f"synthetic-{zone_count}-{seed}"), OdFrequency(weights)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "spec": {
            "passengers": scenario.spec.passengers,
            "taxis": scenario.spec.taxis,
            "window": scenario.spec.window,
            "seed": scenario.spec.seed,
        },
        "matrix_ref": scenario.matrix_ref,
        "requests": [
            {
                "id": r.id,
                "origin": r.origin,
                "destination": r.destination,
                "request_time": r.request_time,
            }
            for r in scenario.requests
        ],
        "fleet": [
            {"id": t.id, "start_zone": t.start_zone, "available_at": t.available_at}
            for t in scenario.fleet
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        spec = ScenarioSpec(
            passengers=int(doc["spec"]["passengers"]),
            taxis=int(doc["spec"]["taxis"]),
            window=int(doc["spec"]["window"]),
            seed=int(doc["spec"].get("seed", 0)),
        )
        requests = tuple(
            PassengerRequest(
                id=int(r["id"]),
                origin=int(r["origin"]),
                destination=int(r["destination"]),
                request_time=int(r["request_time"]),
            )
            for r in doc["requests"]
        )
        fleet = tuple(
            TaxiInit(
                id=int(t["id"]),
                start_zone=int(t["start_zone"]),
                available_at=int(t.get("available_at", 0)),
            )
            for t in doc["fleet"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed scenario document: {exc}") from exc
    return Scenario(spec=spec, requests=requests, fleet=fleet, matrix_ref=doc.get("matrix_ref", "<memory>"))


def scenario_to_json(scenario: Scenario) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"scenario file is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
