"""
Error Hierarchy
Every failure raised by the library carries the CLI exit code it maps to
"""


class CasimirCuspError(Exception):
    """Base class; numeric failures exit with code 4"""

    exit_code = 4


class ConfigError(CasimirCuspError):
    """Config schema violation; message names the offending field path"""

    exit_code = 2


class DependencyError(CasimirCuspError):
    """Upstream artifact missing; message names the command that produces it"""

    exit_code = 3

    def __init__(self, artifact, command):
        self.artifact = artifact
        self.command = command
        super().__init__(f"missing upstream artifact '{artifact}' (run `{command}` first)")


class InvalidInputError(CasimirCuspError):
    pass


class StiffnessError(CasimirCuspError):
    pass


class DivergenceError(CasimirCuspError):
    pass


class EmptySectionError(CasimirCuspError):
    pass


class AmbiguousLobeError(CasimirCuspError):
    pass


class DegenerateRangeError(CasimirCuspError):
    pass


class PreconditionError(CasimirCuspError):
    pass


class FitFailureError(CasimirCuspError):
    pass


class InvalidParameterError(CasimirCuspError):
    pass


class DomainError(CasimirCuspError):
    pass


class LatticeError(CasimirCuspError):
    pass


class DepthError(CasimirCuspError):
    pass


class PartitionError(CasimirCuspError):
    pass


class NonReturningError(CasimirCuspError):
    pass


class CodingAbortError(CasimirCuspError):
    pass


class TruncationError(CasimirCuspError):
    pass


class ConvergenceError(CasimirCuspError):
    pass


class WindowError(CasimirCuspError):
    pass


class GridError(CasimirCuspError):
    pass


class AssumptionError(CasimirCuspError):
    pass


class FitError(CasimirCuspError):
    """Optimizer did not converge; `trace` holds one entry per start point"""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class PipelineError(CasimirCuspError):
    """Wraps a failure inside the perturbed pipeline with the stage it happened in"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline failed at stage '{stage}': {cause}")
