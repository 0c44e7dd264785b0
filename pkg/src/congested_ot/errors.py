"""Exception hierarchy shared by all solvers.

The CLI maps these onto exit codes: invalid input -> 1, non-convergence -> 2,
gate refusals (assumption or interiority preconditions) -> 3.
"""


class CongestedOTError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInstanceError(CongestedOTError):
    """An instance violates a structural invariant (shape, sign, size cap)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnbalancedInstanceError(InvalidInstanceError):
    """Total supply and total capacity differ where balance is required."""


class SizeCapError(InvalidInstanceError):
    """Dense N*L working set exceeds the configured cell cap."""


class ConvergenceError(CongestedOTError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class CyclingGuardError(ConvergenceError):
    """The pivoting guard tripped; with Bland's rule this is unreachable."""


class AssumptionGateError(CongestedOTError):
    """A method was invoked outside the parameter regime that justifies it.

    ``assumption`` names the violated gate (e.g. ``"A4"``) so callers and the
    CLI can report exactly which precondition refused the run.
    """

    def __init__(self, assumption, message):
        self.assumption = assumption
        super().__init__(f"{assumption}: {message}")


class InteriorityError(CongestedOTError):
    """An operation requiring a strictly positive plan met a zero cell."""
