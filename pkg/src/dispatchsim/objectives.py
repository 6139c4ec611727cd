"""Constrained expression language for first-level assignment objectives.

Every objective the assignment solver accepts - built in or generated - is a
weighted list of cost components. Per-pair components are small expression
trees over snapshot features; the three aggregate forms cover squared loads,
squared deviation from the average load, and dropoff-to-pickup chaining.
Keeping the language closed makes generated objectives machine-checkable
instead of being executable code.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

from .errors import ObjectiveParseError, ObjectiveValidationError

MAX_COMPONENTS = 5
MAX_EXPR_DEPTH = 8
MAX_COEFFICIENT = 1e9
DEFAULT_BIG_M = 1e6

#: Per-pair feature leaves: value as a function of (taxi state, passenger).
FEATURE_KINDS = (
    "TR_origin_start",   # travel time, passenger origin -> taxi next-free zone
    "TR_dest_start",     # travel time, passenger destination -> taxi next-free zone
    "TR_trip",           # travel time, passenger origin -> destination
    "time_gap",          # request time minus taxi next-free time (signed)
    "request_time",
    "avail_time",
    "big_m",
)


class ObjectiveClass(Enum):
    LINEAR = "Linear"
    CONVEX_LOAD = "ConvexLoad"
    GENERAL_QUADRATIC = "GeneralQuadratic"


# --------------------------------------------------------------------------
# Expression trees


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Feat:
    kind: str


@dataclass(frozen=True)
class Add:
    left: object
    right: object


@dataclass(frozen=True)
class Sub:
    left: object
    right: object


@dataclass(frozen=True)
class Mul:
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Abs:
    arg: object


@dataclass(frozen=True)
class Relu:
    arg: object


class _ExprParser:
    """Recursive-descent parser for per-pair expressions.

    Grammar:  expr   := term (('+'|'-') term)*
              term   := unary ('*' unary)*
              unary  := '-' unary | primary
              primary:= NUMBER | FEATURE | abs(expr) | relu(expr) | '(' expr ')'
    """

    def __init__(self, text: str):
        self.tokens = self._lex(text)
        self.pos = 0

    @staticmethod
    def _lex(text: str) -> list[str]:
        tokens: list[str] = []
        i = 0
        while i < len(text):
            c = text[i]
            if c.isspace():
                i += 1
            elif c in "+-*()":
                tokens.append(c)
                i += 1
            elif c.isdigit() or c == ".":
                j = i
                while j < len(text) and (text[j].isdigit() or text[j] in ".eE" or
                                         (text[j] in "+-" and text[j - 1] in "eE")):
                    j += 1
                tokens.append(text[i:j])
                i = j
            elif c.isalpha() or c == "_":
                j = i
                while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                tokens.append(text[i:j])
                i = j
            else:
                raise ObjectiveParseError(f"unexpected character {c!r} in expression")
        return tokens

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self):
        tok = self._peek()
        if tok is None:
            raise ObjectiveParseError("unexpected end of expression")
        self.pos += 1
        return tok

    def parse(self):
        node = self._expr()
        if self._peek() is not None:
            raise ObjectiveParseError(f"trailing tokens near {self._peek()!r}")
        return node

    def _expr(self):
        node = self._term()
        while self._peek() in ("+", "-"):
            op = self._next()
            rhs = self._term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def _term(self):
        node = self._unary()
        while self._peek() == "*":
            self._next()
            node = Mul(node, self._unary())
        return node

    def _unary(self):
        if self._peek() == "-":
            self._next()
            return Neg(self._unary())
        return self._primary()

    def _primary(self):
        tok = self._next()
        if tok == "(":
            node = self._expr()
            if self._next() != ")":
                raise ObjectiveParseError("missing closing parenthesis")
            return node
        if tok in ("abs", "relu"):
            if self._next() != "(":
                raise ObjectiveParseError(f"{tok} must be called as {tok}(...)")
            node = self._expr()
            if self._next() != ")":
                raise ObjectiveParseError(f"missing closing parenthesis after {tok}(")
            return Abs(node) if tok == "abs" else Relu(node)
        if tok in FEATURE_KINDS:
            return Feat(tok)
        try:
            return Num(float(tok))
        except ValueError:
            raise ObjectiveParseError(f"unknown feature or token {tok!r}") from None


def parse_expr(text: str):
    if not isinstance(text, str) or not text.strip():
        raise ObjectiveParseError("expression must be a non-empty string")
    return _ExprParser(text).parse()


def expr_to_text(node) -> str:
    """Serialize an expression tree to its canonical text form."""
    if isinstance(node, Num):
        v = node.value
        return repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Feat):
        return node.kind
    if isinstance(node, Add):
        return f"{expr_to_text(node.left)} + {_wrap_addend(node.right)}"
    if isinstance(node, Sub):
        return f"{expr_to_text(node.left)} - {_wrap_addend(node.right)}"
    if isinstance(node, Mul):
        return f"{_wrap_factor(node.left)} * {_wrap_factor(node.right)}"
    if isinstance(node, Neg):
        return f"-{_wrap_factor(node.arg)}"
    if isinstance(node, Abs):
        return f"abs({expr_to_text(node.arg)})"
    if isinstance(node, Relu):
        return f"relu({expr_to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def _wrap_addend(node) -> str:
    text = expr_to_text(node)
    return f"({text})" if isinstance(node, (Add, Sub)) else text


def _wrap_factor(node) -> str:
    text = expr_to_text(node)
    return f"({text})" if isinstance(node, (Add, Sub, Mul, Neg)) else text


def expr_depth(node) -> int:
    if isinstance(node, (Num, Feat)):
        return 1
    if isinstance(node, (Neg, Abs, Relu)):
        return 1 + expr_depth(node.arg)
    return 1 + max(expr_depth(node.left), expr_depth(node.right))


def _is_constant(node) -> bool:
    if isinstance(node, Num):
        return True
    if isinstance(node, Feat):
        return False
    if isinstance(node, (Neg, Abs, Relu)):
        return _is_constant(node.arg)
    return _is_constant(node.left) and _is_constant(node.right)


def _check_expr(node, abs_depth: int, violations: list[str]) -> None:
    if isinstance(node, Num):
        if not math.isfinite(node.value):
            violations.append("non-finite constant in expression")
        elif abs(node.value) > MAX_COEFFICIENT:
            violations.append(f"constant {node.value} exceeds magnitude bound {MAX_COEFFICIENT:g}")
    elif isinstance(node, Feat):
        if node.kind not in FEATURE_KINDS:
            violations.append(f"unknown feature {node.kind!r}")
        elif node.kind == "big_m" and abs_depth > 1:
            violations.append("big_m nested deeper than one abs/relu level")
    elif isinstance(node, (Abs, Relu)):
        _check_expr(node.arg, abs_depth + 1, violations)
    elif isinstance(node, Neg):
        _check_expr(node.arg, abs_depth, violations)
    elif isinstance(node, Mul):
        if not (_is_constant(node.left) or _is_constant(node.right)):
            violations.append("multiplication needs a constant factor")
        _check_expr(node.left, abs_depth, violations)
        _check_expr(node.right, abs_depth, violations)
    elif isinstance(node, (Add, Sub)):
        _check_expr(node.left, abs_depth, violations)
        _check_expr(node.right, abs_depth, violations)
    else:
        violations.append(f"foreign node {type(node).__name__} in expression")


def eval_expr(node, features: dict[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Feat):
        return features[node.kind]
    if isinstance(node, Add):
        return eval_expr(node.left, features) + eval_expr(node.right, features)
    if isinstance(node, Sub):
        return eval_expr(node.left, features) - eval_expr(node.right, features)
    if isinstance(node, Mul):
        return eval_expr(node.left, features) * eval_expr(node.right, features)
    if isinstance(node, Neg):
        return -eval_expr(node.arg, features)
    if isinstance(node, Abs):
        return abs(eval_expr(node.arg, features))
    if isinstance(node, Relu):
        return max(eval_expr(node.arg, features), 0.0)
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# Cost components and objective specs


@dataclass(frozen=True)
class PairLinear:
    """Sum over assigned (taxi, passenger) pairs of a per-pair expression."""

    expr: object

    form = "PairLinear"


@dataclass(frozen=True)
class LoadQuadratic:
    """Sum over taxis of the squared passenger count."""

    form = "LoadQuadratic"


@dataclass(frozen=True)
class LoadDeviation:
    """Sum over taxis of the squared deviation from the average load P/C."""

    form = "LoadDeviation"


@dataclass(frozen=True)
class ChainQuadratic:
    """Dropoff-to-pickup travel time summed over ordered co-assigned pairs."""

    form = "ChainQuadratic"


@dataclass(frozen=True)
class ObjectiveSpec:
    components: tuple
    weights: tuple[float, ...]

    def describe(self) -> str:
        parts = [
            f"{w:g}*{c.form}" + (f"[{expr_to_text(c.expr)}]" if isinstance(c, PairLinear) else "")
            for c, w in zip(self.components, self.weights)
        ]
        return " + ".join(parts)


def serialize(spec: ObjectiveSpec) -> str:
    """Canonical JSON form; ``parse(serialize(s)) == s`` for valid specs."""
    comps = []
    for c in spec.components:
        if isinstance(c, PairLinear):
            comps.append({"form": "PairLinear", "expr": expr_to_text(c.expr)})
        else:
            comps.append({"form": c.form})
    return json.dumps({"components": comps, "weights": list(spec.weights)}, sort_keys=True)


def parse(text: str) -> ObjectiveSpec:
    """Parse and validate the JSON objective document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ObjectiveParseError(f"objective is not valid JSON: {exc}") from exc
    return parse_dict(doc)


def parse_dict(doc) -> ObjectiveSpec:
    if not isinstance(doc, dict):
        raise ObjectiveParseError("objective document must be a JSON object")
    comps_doc = doc.get("components")
    weights_doc = doc.get("weights")
    if not isinstance(comps_doc, list) or not isinstance(weights_doc, list):
        raise ObjectiveParseError("objective needs 'components' and 'weights' lists")

    components = []
    for item in comps_doc:
        if not isinstance(item, dict) or "form" not in item:
            raise ObjectiveParseError(f"component must be an object with a 'form': {item!r}")
        form = item["form"]
        if form == "PairLinear":
            components.append(PairLinear(parse_expr(item.get("expr", ""))))
        elif form == "LoadQuadratic":
            components.append(LoadQuadratic())
        elif form == "LoadDeviation":
            components.append(LoadDeviation())
        elif form == "ChainQuadratic":
            components.append(ChainQuadratic())
        else:
            raise ObjectiveParseError(f"unknown component form {form!r}")

    try:
        weights = tuple(float(w) for w in weights_doc)
    except (TypeError, ValueError) as exc:
        raise ObjectiveParseError(f"weights must be numbers: {exc}") from exc

    spec = ObjectiveSpec(components=tuple(components), weights=weights)
    violations = validate(spec)
    if violations:
        raise ObjectiveValidationError(violations)
    return spec


def validate(spec: ObjectiveSpec) -> list[str]:
    """Return the list of construction-rule violations (empty when valid)."""
    violations: list[str] = []
    n = len(spec.components)
    if n < 1 or n > MAX_COMPONENTS:
        violations.append(f"component count {n} outside 1..{MAX_COMPONENTS}")
    if len(spec.weights) != n:
        violations.append(f"{len(spec.weights)} weights for {n} components")
    for w in spec.weights:
        if not math.isfinite(w):
            violations.append(f"non-finite weight {w!r}")
        elif abs(w) > MAX_COEFFICIENT:
            violations.append(f"weight {w} exceeds magnitude bound {MAX_COEFFICIENT:g}")
    for c in spec.components:
        if isinstance(c, PairLinear):
            depth = expr_depth(c.expr)
            if depth > MAX_EXPR_DEPTH:
                violations.append(f"expression depth {depth} exceeds {MAX_EXPR_DEPTH}")
            _check_expr(c.expr, 0, violations)
        elif not isinstance(c, (LoadQuadratic, LoadDeviation, ChainQuadratic)):
            violations.append(f"unknown component {type(c).__name__}")
    return violations


_BUILTINS = {
    "distance": ([("PairLinear", "TR_origin_start + TR_dest_start")], [1.0]),
    "temporal": ([("PairLinear", "abs(time_gap)")], [1.0]),
    "utilization": ([("LoadQuadratic", None)], [1.0]),
    "dist_util": (
        [("PairLinear", "TR_origin_start + TR_dest_start"), ("LoadQuadratic", None)],
        [1.0, 1.0],
    ),
    "temp_util": (
        [("PairLinear", "abs(time_gap)"), ("LoadQuadratic", None)],
        [1.0, 1.0],
    ),
    "default_composite": (
        [
            ("PairLinear", "TR_origin_start + TR_dest_start"),
            ("PairLinear", "abs(time_gap)"),
            ("LoadQuadratic", None),
        ],
        [1.0, 1.0, 1.0],
    ),
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin(name: str, weights=None) -> ObjectiveSpec:
    """A named manual objective; composites are weighted sums (default 1.0)."""
    if name not in _BUILTINS:
        raise ObjectiveParseError(f"unknown builtin objective {name!r}")
    comp_defs, default_w = _BUILTINS[name]
    w = tuple(float(x) for x in (weights if weights is not None else default_w))
    if len(w) != len(comp_defs):
        raise ObjectiveParseError(f"{name} takes {len(comp_defs)} weights")
    components = []
    for form, expr in comp_defs:
        components.append(PairLinear(parse_expr(expr)) if form == "PairLinear" else LoadQuadratic())
    return ObjectiveSpec(components=tuple(components), weights=w)


def classify(spec: ObjectiveSpec) -> ObjectiveClass:
    """Solver dispatch class, by the hardest component present."""
    if any(isinstance(c, ChainQuadratic) for c in spec.components):
        return ObjectiveClass.GENERAL_QUADRATIC
    if any(isinstance(c, (LoadQuadratic, LoadDeviation)) for c in spec.components):
        return ObjectiveClass.CONVEX_LOAD
    return ObjectiveClass.LINEAR


# --------------------------------------------------------------------------
# Evaluation


def pair_features(vehicle, request, matrix, big_m: float = DEFAULT_BIG_M) -> dict[str, float]:
    """Feature values for one (taxi next-free state, pending request) pair."""
    zone, free_at = vehicle.zone, vehicle.free_at
    return {
        "TR_origin_start": float(matrix.time(request.origin, zone)),
        "TR_dest_start": float(matrix.time(request.destination, zone)),
        "TR_trip": float(matrix.time(request.origin, request.destination)),
        "time_gap": float(request.request_time - free_at),
        "request_time": float(request.request_time),
        "avail_time": float(free_at),
        "big_m": float(big_m),
    }


def evaluate(spec: ObjectiveSpec, assignment: dict[int, int], snap, matrix,
             big_m: float = DEFAULT_BIG_M) -> float:
    """Total weighted cost of an assignment on a snapshot. Pure.

    ``assignment`` maps every pending passenger id in ``snap`` to a taxi id.
    """
    vehicles = {v.taxi_id: v for v in snap.vehicles}
    requests = {r.id: r for r in snap.requests}
    if set(assignment) != set(requests):
        raise ObjectiveParseError("assignment must cover exactly the pending passengers")

    loads: dict[int, int] = {v: 0 for v in vehicles}
    by_taxi: dict[int, list[int]] = {v: [] for v in vehicles}
    for p, v in assignment.items():
        if v not in vehicles:
            raise ObjectiveParseError(f"assignment references unknown taxi {v}")
        loads[v] += 1
        by_taxi[v].append(p)

    total = 0.0
    p_count = len(requests)
    c_count = len(vehicles)
    for comp, w in zip(spec.components, spec.weights):
        if isinstance(comp, PairLinear):
            value = 0.0
            for p, v in assignment.items():
                value += eval_expr(comp.expr, pair_features(vehicles[v], requests[p], matrix, big_m))
        elif isinstance(comp, LoadQuadratic):
            value = float(sum(k * k for k in loads.values()))
        elif isinstance(comp, LoadDeviation):
            mean = p_count / c_count
            value = float(sum((k - mean) ** 2 for k in loads.values()))
        elif isinstance(comp, ChainQuadratic):
            value = 0.0
            for v, plist in by_taxi.items():
                for p in plist:
                    for q in plist:
                        if p != q:
                            value += float(matrix.time(requests[p].destination, requests[q].origin))
        else:
            raise ObjectiveParseError(f"unknown component {type(comp).__name__}")
        total += w * value
    return total
