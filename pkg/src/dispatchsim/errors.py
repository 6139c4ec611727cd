"""Exception hierarchy shared across the package.

Input/usage problems derive from ``InputError`` (mapped to HTTP 400 / CLI exit
code 2); broken internal invariants derive from ``InternalError`` (HTTP 500 /
CLI exit code 3).
"""


class DispatchError(Exception):
    """Base class for everything raised by this package."""


class InputError(DispatchError):
    """A caller-supplied value or file is invalid."""


class MatrixFormatError(InputError):
    """A travel-time or OD-frequency CSV violates its format contract."""


class ScenarioNameError(InputError):
    """A scenario name does not match the P<int>_C<int>_T<int> pattern."""


class ObjectiveParseError(InputError):
    """An objective document cannot be parsed into an expression tree."""


class ObjectiveValidationError(InputError):
    """A structurally parsed objective violates the construction rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CommandError(InputError):
    """A dispatch command references passengers it must not."""


class SizeLimitError(InputError):
    """An instance exceeds an exact solver's size limit."""


class UnservedPassengersError(InputError):
    """Metrics were requested on a trace that is not complete."""

    def __init__(self, passenger_ids):
        self.passenger_ids = sorted(passenger_ids)
        super().__init__(f"unserved passengers: {self.passenger_ids}")


class TransportError(DispatchError):
    """The remote generator endpoint stayed unreachable after retries."""


class ExtractionError(DispatchError):
    """No valid objective could be extracted from a generator response."""


class InternalError(DispatchError):
    """An internal invariant broke; indicates a bug, aborts the run."""
