"""Exception hierarchy shared by all modules."""


class RiskMPCError(Exception):
    """Base class for every error raised by this package."""


class InvalidMatrix(RiskMPCError, ValueError):
    pass


class NotPositiveSemidefinite(RiskMPCError, ValueError):
    pass


class InvalidRiskParameter(RiskMPCError, ValueError):
    pass


class EmptyEnvelope(RiskMPCError, ValueError):
    pass


class InvalidVertex(RiskMPCError, ValueError):
    pass


class CapacityExceeded(RiskMPCError):
    pass


class ShapeMismatch(RiskMPCError, ValueError):
    pass


class ConfigError(RiskMPCError, ValueError):
    pass


class InvalidScenario(RiskMPCError, IndexError):
    pass


class InvalidProgram(RiskMPCError, ValueError):
    pass


class SolverFailed(RiskMPCError):
    """The conic backend did not reach an optimal point."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class SynthesisInfeasible(RiskMPCError):
    """The terminal-cost LMI has no strictly feasible point.

    ``certificate`` holds the dual multipliers proving it (or bounding the
    achievable LMI margin below the strictness threshold).
    """

    def __init__(self, message, certificate=None, margin=None):
        super().__init__(message)
        self.certificate = certificate
        self.margin = margin


class VerificationFailed(RiskMPCError):
    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


class InvalidLyapunov(RiskMPCError, ValueError):
    pass


class DegenerateFit(RiskMPCError):
    pass
