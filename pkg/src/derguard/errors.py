"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """Raised when an input file cannot be parsed."""


class ValidationError(ValueError):
    """Raised when a parsed model violates an invariant.

    The message names the violated invariant and the offending entity id.
    """


class RadialityError(ValidationError):
    """Topology is not a tree rooted at the declared root."""


class PowerFlowError(RuntimeError):
    """Power flow failed to converge; carries the final mismatch."""

    def __init__(self, message, mismatch=None):
        super().__init__(message)
        self.mismatch = mismatch


class DispatchInfeasible(RuntimeError):
    """Dispatch program is infeasible; carries the solver certificate."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class AttackInfeasible(RuntimeError):
    """No falsification signal satisfies the depth/cap constraints."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
