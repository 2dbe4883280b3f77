"""Exception hierarchy shared by every planrisk module."""


class PlanRiskError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(PlanRiskError, ValueError):
    """A caller passed an argument outside an operation's precondition."""


class ValidationError(PlanRiskError, ValueError):
    """Loaded data violates a documented invariant."""


class FormatError(ValidationError):
    """A binary file does not start with the expected header."""


class TruncationError(ValidationError):
    """A binary payload is shorter (or longer) than its header declares."""


class ZeroMassError(PlanRiskError, ValueError):
    """A saliency tensor or count vector has no mass to normalize."""


class DataError(PlanRiskError, ValueError):
    """A fit cannot proceed on the rows it was given."""


class TransportError(PlanRiskError, OSError):
    """An external planner could not be reached or answered with an error."""


class PlannerError(PlanRiskError, RuntimeError):
    """A planner query failed; carries the index of the failing batch element."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SearchAborted(PlanRiskError, RuntimeError):
    """An attribution search stopped because a planner query failed."""

    def __init__(self, message, steps_completed=0, planner_calls=0):
        super().__init__(message)
        self.steps_completed = steps_completed
        self.planner_calls = planner_calls
