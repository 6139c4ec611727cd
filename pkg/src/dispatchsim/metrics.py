"""Waiting-time metrics and diagnostics, single-sourced.

A passenger's delay is max(pickup time - request time, 0) seconds. Reports
use minutes; files keep raw seconds. Heatmaps aggregate mean delay per
(origin zone, pickup-time bin).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UnservedPassengersError
from .network import Scenario
from .simulator import SimTrace


def delay(pickup_s: int, request_s: int) -> int:
    return max(pickup_s - request_s, 0)


@dataclass(frozen=True)
class PassengerDelay:
    passenger_id: int
    delay_s: int
    origin: int
    bin: int


@dataclass(frozen=True)
class Metrics:
    mean_wait_min: float
    per_passenger: tuple[PassengerDelay, ...]
    heatmap: dict  # (zone, bin) -> (mean_delay_min, count)
    bin_seconds: int
    error_rate: float = 0.0

    def to_dict(self, scenario_name: str = "", objective: str = "") -> dict:
        return {
            "scenario": scenario_name,
            "objective": objective,
            "bin_seconds": self.bin_seconds,
            "mean_wait_min": self.mean_wait_min,
            "error_rate": self.error_rate,
            "per_passenger": [
                {"id": p.passenger_id, "delay_s": p.delay_s, "origin": p.origin, "bin": p.bin}
                for p in self.per_passenger
            ],
            "heatmap": [
                {
                    "zone": zone,
                    "bin": b,
                    "mean_delay_min": self.heatmap[(zone, b)][0],
                    "count": self.heatmap[(zone, b)][1],
                }
                for (zone, b) in sorted(self.heatmap)
            ],
        }


def collect_metrics(
    trace: SimTrace,
    scenario: Scenario,
    bin_seconds: int = 600,
    error_rate: float = 0.0,
) -> Metrics:
    """Per-passenger delays, their mean in minutes, and the zone/bin heatmap."""
    requests = {r.id: r for r in scenario.requests}
    unserved = set(requests) - set(trace.served)
    if unserved:
        raise UnservedPassengersError(unserved)

    per: list[PassengerDelay] = []
    cells: dict[tuple[int, int], list[int]] = {}
    for pid in sorted(requests):
        pickup_t, _ = trace.served[pid]
        d = delay(pickup_t, requests[pid].request_time)
        b = pickup_t // bin_seconds
        per.append(PassengerDelay(pid, d, requests[pid].origin, b))
        cells.setdefault((requests[pid].origin, b), []).append(d)

    heatmap = {
        cell: (sum(ds) / len(ds) / 60.0, len(ds))
        for cell, ds in cells.items()
    }
    mean_min = (sum(p.delay_s for p in per) / len(per) / 60.0) if per else 0.0
    return Metrics(
        mean_wait_min=mean_min,
        per_passenger=tuple(per),
        heatmap=heatmap,
        bin_seconds=bin_seconds,
        error_rate=error_rate,
    )


def heatmap_csv(metrics: Metrics) -> str:
    lines = ["zone,bin,mean_delay_min,count"]
    for (zone, b) in sorted(metrics.heatmap):
        mean_min, count = metrics.heatmap[(zone, b)]
        lines.append(f"{zone},{b},{mean_min:.6f},{count}")
    return "\n".join(lines) + "\n"


def search_space_estimate(passengers: int, taxis: int, per_taxi: int, steps: int) -> int:
    """Exact count (taxis^passengers * (per_taxi!)^taxis) ^ steps."""
    if min(passengers, taxis, per_taxi, steps) < 0:
        raise ValueError("arguments must be non-negative")
    per_step = (taxis ** passengers) * (math.factorial(per_taxi) ** taxis)
    return per_step ** steps
