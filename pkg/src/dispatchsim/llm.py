"""Objective generation: prompt assembly, transport, and response extraction.

Prompts are a fixed-order concatenation of six blocks: role, geography,
objective-schema blueprint, dynamic state, operator directive, and the
construction-rule restriction. The client speaks a chat-completions-style
HTTP protocol in remote mode and has two offline modes: ``mock`` (seeded
pseudo-random objectives, optionally invalid at a configured rate) and
``adaptive`` (a scripted policy that raises the load-balancing weight as
pending demand grows). Extraction pulls the first JSON object out of an
arbitrary response and validates it against the objective language; any
failure is reported so the caller can fall back to the default objective.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass
from enum import Enum

import httpx

from .errors import ExtractionError, InputError, TransportError
from .objectives import (
    ObjectiveSpec,
    ObjectiveParseError,
    ObjectiveValidationError,
    parse_dict,
    serialize,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "DISPATCHSIM_API_KEY"
GEO_ZONE_CAP = 19  # keep the rendered matrix block small


class OperatorKind(Enum):
    RANDOM = "random"      # fresh objective, no parent
    REFINE = "refine"      # incremental improvement of a parent
    REINVENT = "reinvent"  # new formulation inspired by a parent

    @property
    def needs_parent(self) -> bool:
        return self is not OperatorKind.RANDOM


@dataclass(frozen=True)
class PromptBundle:
    """Static prompt blocks, built once per scenario."""

    sys: str
    geo: str
    model: str
    restriction: str


@dataclass(frozen=True)
class GeneratorConfig:
    mode: str = "mock"  # mock | adaptive | remote
    endpoint_url: str = ""
    model_name: str = "default-model"
    temperature: float = 0.9
    max_retries: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.5
    mock_invalid_rate: float = 0.0
    mock_seed: int = 0
    audit_path: str = ""  # append prompt/response JSON lines here when set

    def __post_init__(self):
        if self.mode not in ("mock", "adaptive", "remote"):
            raise InputError(f"unknown generator mode {self.mode!r}")
        if not 0.0 <= self.mock_invalid_rate <= 1.0:
            raise InputError("mock_invalid_rate must be in [0, 1]")
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")
        if self.mode == "remote" and not self.endpoint_url:
            raise InputError("remote mode needs an endpoint URL")


SYS_BLOCK = """[role]
You design the cost function for the passenger-to-taxi assignment stage of a
two-stage dispatch engine. The assignment stage picks one taxi per pending
passenger by minimizing your cost function; a separate routing stage then
orders each taxi's passengers to minimize their waiting. Your goal is to
shape assignments so that total passenger waiting time stays low. Reply with
one JSON objective document following the schema and rules below.
"""

MODEL_BLOCK_TEMPLATE = """[objective schema]
An objective is a JSON object with a "components" list (1 to 5 entries) and a
"weights" list of matching length. The total cost is the weighted sum of the
component values. Component forms:
  {"form": "PairLinear", "expr": "<expression>"}
      summed over assigned (taxi, passenger) pairs; the expression may use
      features TR_origin_start, TR_dest_start, TR_trip, time_gap,
      request_time, avail_time, big_m, numeric constants, + - *, abs(x),
      relu(x). Multiplication needs a constant factor.
  {"form": "LoadQuadratic"}   sum over taxis of (passenger count)^2
  {"form": "LoadDeviation"}   sum over taxis of (count - average count)^2
  {"form": "ChainQuadratic"}  dropoff-to-pickup travel time between
                              passengers sharing a taxi
The baseline document in use today is:
__DEFAULT_DOC__
"""

RESTRICTION_BLOCK = """[rules]
1. Reply with exactly one JSON object of the schema above.
2. 1 to 5 components; weights list has the same length; weights are finite
   numbers with magnitude at most 1e9.
3. Expressions only use the listed features and operators, nest at most 8
   levels deep, and keep big_m outside abs/relu nested more than one level.
4. No code, no solver calls, no conditionals on assignment variables.
"""

REFINE_DIRECTIVE = """[task]
Develop an improved objective starting from the parent below. Keep roughly
half of the parent's components unchanged. Consider tightening the match
between taxi free times and passenger request times, and scale the
load-balancing weight to current fleet pressure.
"""

REINVENT_DIRECTIVE = """[task]
Reinvent the objective from the parent below rather than editing it. Aim the
assignment cost at the waiting the routing stage will actually produce:
consider the travel legs chained between co-assigned passengers, the demand
you expect over the next intervals, and weights that change with the state.
"""

RANDOM_DIRECTIVE = """[task]
Propose a new objective for the assignment stage, without historical
knowledge. Use the current state below to choose components and weights.
"""


def default_objective_doc() -> str:
    from .objectives import builtin

    return serialize(builtin("default_composite"))


def build_bundle(matrix) -> PromptBundle:
    """Static blocks for one scenario's geography."""
    n = matrix.zone_count
    lines = [f"[geography]", f"zones: {n} (0..{n - 1})"]
    shown = min(n, GEO_ZONE_CAP)
    lines.append("travel seconds between zones (row=from, col=to):")
    for i in range(shown):
        row = " ".join(str(matrix.time(i, j)) for j in range(shown))
        lines.append(f"  {i}: {row}")
    if shown < n:
        lines.append(f"  ... {n - shown} more zones omitted")
    geo = "\n".join(lines) + "\n"
    model = MODEL_BLOCK_TEMPLATE.replace("__DEFAULT_DOC__", default_objective_doc())
    return PromptBundle(sys=SYS_BLOCK, geo=geo, model=model, restriction=RESTRICTION_BLOCK)


def dyn_block(snap) -> str:
    lines = [
        "[state]",
        f"clock: {snap.clock}",
        f"vehicles: {len(snap.vehicles)}",
        f"pending_count: {len(snap.requests)}",
    ]
    for v in snap.vehicles:
        lines.append(f"veh {v.taxi_id}: zone={v.zone} free_at={v.free_at}")
    for r in snap.requests:
        lines.append(f"req {r.id}: origin={r.origin} dest={r.destination} t={r.request_time}")
    return "\n".join(lines) + "\n"


def operator_block(kind: OperatorKind, parent_text: str | None) -> str:
    if kind is OperatorKind.RANDOM:
        if parent_text is not None:
            raise InputError("random operator takes no parent")
        return RANDOM_DIRECTIVE
    if parent_text is None:
        raise InputError(f"{kind.value} operator needs a parent")
    directive = REFINE_DIRECTIVE if kind is OperatorKind.REFINE else REINVENT_DIRECTIVE
    return directive + "[parent]\n" + parent_text.rstrip() + "\n"


def compose_prompt(bundle: PromptBundle, kind: OperatorKind, snap,
                   parent_text: str | None = None) -> str:
    """Full prompt: role, geography, schema, state, operator, rules - in that
    fixed order, each block exactly once."""
    return "".join(
        [
            bundle.sys,
            bundle.geo,
            bundle.model,
            dyn_block(snap),
            operator_block(kind, parent_text),
            bundle.restriction,
        ]
    )


# --------------------------------------------------------------------------
# Client


_MOCK_EXPRS = (
    "TR_origin_start + TR_dest_start",
    "abs(time_gap)",
    "relu(-time_gap)",
    "TR_trip + TR_origin_start",
    "2 * TR_origin_start + TR_dest_start",
    "relu(time_gap) + TR_origin_start",
)

_MOCK_INVALID = (
    "I cannot help with that request.",
    "Here is the objective: {\"components\": [], \"weights\": []}",
    "{\"components\": [{\"form\": \"PairLinear\", \"expr\": \"TR_origin_start\"}], \"weights\": [1, 2]}",
    "objective = minimize distance  # no JSON at all",
    "{\"components\": [{\"form\": \"Mystery\"}], \"weights\": [1]}",
)


class GeneratorClient:
    """Uniform completion interface over the remote endpoint and both mocks."""

    def __init__(self, cfg: GeneratorConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self._transport = transport

    def complete(self, prompt: str) -> str:
        if self.cfg.mode == "mock":
            response = self._mock_response(prompt)
        elif self.cfg.mode == "adaptive":
            response = self._adaptive_response(prompt)
        else:
            response = self._remote_response(prompt)
        if self.cfg.audit_path:
            with open(self.cfg.audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"prompt": prompt, "response": response}) + "\n")
        return response

    # -- offline modes ----------------------------------------------------

    def _mock_rng(self, prompt: str) -> random.Random:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        return random.Random(f"{self.cfg.mock_seed}:{digest}")

    def _mock_response(self, prompt: str) -> str:
        rng = self._mock_rng(prompt)
        if rng.random() < self.cfg.mock_invalid_rate:
            return rng.choice(_MOCK_INVALID)
        components = [{"form": "PairLinear", "expr": rng.choice(_MOCK_EXPRS)}]
        weights = [float(rng.randint(1, 5))]
        if rng.random() < 0.7:
            components.append({"form": rng.choice(["LoadQuadratic", "LoadDeviation"])})
            weights.append(float(rng.randint(1, 4)))
        if rng.random() < 0.3:
            components.append({"form": "ChainQuadratic"})
            weights.append(round(rng.uniform(0.5, 2.0) * 2) / 2)
        doc = json.dumps({"components": components, "weights": weights})
        return f"Considering the current fleet state, I propose:\n{doc}\nThis should balance the listed pressures."

    def _adaptive_response(self, prompt: str) -> str:
        m = re.search(r"pending_count:\s*(\d+)", prompt)
        pending = int(m.group(1)) if m else 0
        util_weight = round(0.5 * pending, 1)
        doc = json.dumps(
            {
                "components": [
                    {"form": "PairLinear", "expr": "TR_origin_start + TR_dest_start"},
                    {"form": "PairLinear", "expr": "abs(time_gap)"},
                    {"form": "LoadQuadratic"},
                ],
                "weights": [1.0, 1.0, util_weight],
            }
        )
        return f"With {pending} passengers pending, load balancing matters accordingly:\n{doc}"

    # -- remote mode -------------------------------------------------------

    def _remote_response(self, prompt: str) -> str:
        body = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0 and self.cfg.backoff_base > 0:
                time.sleep(self.cfg.backoff_base * (2 ** (attempt - 1)))
            try:
                with httpx.Client(transport=self._transport, timeout=self.cfg.timeout) as client:
                    resp = client.post(self.cfg.endpoint_url, json=body, headers=headers)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = TransportError(f"status {resp.status_code}")
                    continue
                resp.raise_for_status()
                payload = resp.json()
                return payload["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise TransportError(f"generator unreachable after {self.cfg.max_retries + 1} attempts: {last_error}")


# --------------------------------------------------------------------------
# Extraction


def _first_json_object(text: str) -> dict | None:
    """First balanced {...} region that parses as JSON, scanning left to right."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            c = text[i]
            if in_string:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        doc = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(doc, dict):
                        return doc
                    break
        start = text.find("{", start + 1)
    return None


def extract_objective(response: str) -> ObjectiveSpec:
    """Parse the first JSON object in a response into a validated objective.

    Raises ExtractionError on any failure; never raises anything else, no
    matter the input bytes.
    """
    if not isinstance(response, str):
        raise ExtractionError("response is not text")
    doc = _first_json_object(response)
    if doc is None:
        raise ExtractionError("no JSON object found in response")
    try:
        return parse_dict(doc)
    except ObjectiveValidationError as exc:
        raise ExtractionError(f"objective rejected: {exc}") from exc
    except ObjectiveParseError as exc:
        raise ExtractionError(f"objective unparseable: {exc}") from exc
