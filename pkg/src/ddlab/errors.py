"""Exception hierarchy shared by all ddlab modules."""


class DDLabError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ConfigError(DDLabError, ValueError):
    """Invalid configuration or arguments (CLI exit code 2)."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SingularPoint(DDLabError):
    pass


class AxiomViolation(DDLabError):
    def __init__(self, axiom, witness, message=None):
        self.axiom = axiom
        self.witness = witness
        super().__init__(message or f"profile violates ({axiom}) at t={witness:.6g}")


class ResourceLimit(DDLabError):
    pass


class DegenerateElement(DDLabError):
    pass


class NonFiniteSample(DDLabError):
    pass


class NonPositiveError(DDLabError, ValueError):
    pass


class EllipticityViolation(DDLabError):
    pass


class EmptySystem(DDLabError):
    pass


class NoConvergence(DDLabError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class ZeroReference(DDLabError):
    pass
