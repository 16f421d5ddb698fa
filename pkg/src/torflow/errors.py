"""Exception hierarchy for torflow."""


class TorflowError(Exception):
    """Base class for all torflow errors."""


class InvariantError(TorflowError, ValueError):
    """A domain, field or state violates its construction invariants."""


class DomainMismatchError(InvariantError):
    """Two operands live on different domains."""


class UnsupportedBackendError(TorflowError):
    """The operation is not available on this domain backend."""


class TopologyError(TorflowError, ValueError):
    """The operation requires a different Euler characteristic."""


class SolvabilityError(TorflowError, ValueError):
    """Right-hand side of a singular elliptic problem is not mean-free."""


class SolverFailure(TorflowError, RuntimeError):
    """An iterative solver did not converge."""


class StepFailure(TorflowError, RuntimeError):
    """A time step produced non-finite values."""

    def __init__(self, message, t):
        super().__init__(f"{message} (t={t!r})")
        self.t = t


class ConfigError(TorflowError, ValueError):
    """Run configuration could not be parsed or validated."""
