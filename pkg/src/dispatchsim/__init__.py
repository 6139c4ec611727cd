"""Hierarchical ride-hailing dispatch engine with evolving objectives.

Core flow: generate or load a scenario, then per decision epoch assign
pending passengers to taxis under a pluggable objective, sequence each taxi
exactly, and execute the commands in the discrete-event simulator. The
objective can be a named builtin, a JSON document, or the product of a
harmony-search evolution loop over prompt plans for an LLM-style generator.
"""

__version__ = "0.1.0"

from .network import (
    OdFrequency,
    PassengerRequest,
    Scenario,
    ScenarioSpec,
    TaxiInit,
    TravelTimeMatrix,
    generate_scenario,
    load_od_frequency,
    load_travel_matrix,
    parse_scenario_name,
    synthetic_inputs,
)
from .objectives import ObjectiveSpec, builtin, classify, evaluate, parse, serialize, validate
from .simulator import DynContext, SimState, SimTrace, Task, VehicleView
from .sequencing import Route, brute_force_sequence, solve_sequence
from .holistic import HolisticSolution, hierarchical_pipeline, solve_holistic
from .metrics import Metrics, collect_metrics, delay, search_space_estimate
from .llm import GeneratorClient, GeneratorConfig, OperatorKind, extract_objective
from .evolution import EvolutionReport, HsParams, Individual, run_evolution
from .engine import FixedObjectiveProvider, GeneratedObjectiveProvider, run_episode
