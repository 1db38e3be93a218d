"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the CLI exit code it maps to, so the command line layer
never needs to inspect messages.
"""


class MatchedPairsError(Exception):
    exit_code = 1


class SchemaError(MatchedPairsError):
    """A required column is missing or a schema is malformed."""

    exit_code = 2


class ValidationError(MatchedPairsError):
    """One or more input rows violate a record invariant.

    ``problems`` is a list of ``(row_number, message)`` tuples where
    ``row_number`` is 1-based over data rows (the header is not counted).
    """

    exit_code = 2

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class IntegrityError(MatchedPairsError):
    """Cross-object references are inconsistent (dangling ids, mixed eras)."""

    exit_code = 2


class EmptyInputError(MatchedPairsError):
    exit_code = 2


class ConfigError(MatchedPairsError):
    exit_code = 5


class FitError(MatchedPairsError):
    exit_code = 3


class SeparationError(FitError):
    """Complete or quasi-complete separation drove a coefficient past the guard."""

    def __init__(self, message, predictor=None, beta=None):
        super().__init__(message)
        self.predictor = predictor
        self.beta = beta


class SingularityError(FitError):
    pass


class ConvergenceError(FitError):
    """Iteration limit reached; ``last_iterate`` holds the final parameter vector."""

    def __init__(self, message, last_iterate=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.trace = trace or []


class OutputError(MatchedPairsError):
    exit_code = 4
