"""Exception types shared across the package."""


class GridMarginError(Exception):
    """Base class for all package errors."""


class StructuralError(GridMarginError):
    """A case references components that do not exist (dangling ids, etc.)."""


class ValidationError(GridMarginError):
    """A case or parameter block violates a declared invariant.

    ``failures`` lists every violation found, not just the first.
    """

    def __init__(self, failures):
        if isinstance(failures, str):
            failures = [failures]
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))


class PowerFlowDivergedError(GridMarginError):
    """Newton power flow failed to converge (infeasible or beyond-nose point)."""


class AlgebraicDivergenceError(GridMarginError):
    """The network algebraic solve inside a dynamic step failed to converge."""

    def __init__(self, t, message="network algebraic solve diverged"):
        self.t = t
        super().__init__(f"{message} at t={t:.4f} s")


class InitializationError(GridMarginError):
    """Dynamic states cannot be initialized consistently with the power flow."""


class HeadroomError(GridMarginError):
    """Requested stress exceeds the dispatchable headroom of the source area."""


class BracketError(GridMarginError):
    """Binary search bracket is invalid (lower bound not stable)."""


class ClassificationError(GridMarginError):
    """Instability classification was requested for a stable trace."""
