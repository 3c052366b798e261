"""Exception hierarchy shared by all modules."""


class CemContactError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CemContactError, ValueError):
    """Invalid sizes, boundary assignments or experiment settings."""


class SolverFailure(CemContactError, RuntimeError):
    """A linear or eigen solve did not meet its contract.

    ``report`` carries the last :class:`~cemcontact.numkernel.SolveReport`
    when one is available; ``context`` accumulates location tags such as
    ``{"i": 3, "j": 1, "m": 4, "k": 2}`` as the error propagates outward.
    """

    def __init__(self, message, report=None, context=None):
        super().__init__(message)
        self.report = report
        self.context = dict(context or {})

    def annotate(self, **context):
        self.context.update(context)
        return self

    def __str__(self):
        base = super().__str__()
        if self.context:
            tags = ", ".join(f"{k}={v}" for k, v in self.context.items())
            return f"{base} [{tags}]"
        return base


class NonTermination(CemContactError, RuntimeError):
    """The active set iteration hit ``max_iter`` without reaching a fixpoint."""

    def __init__(self, message, active_sets=None):
        super().__init__(message)
        self.active_sets = list(active_sets or [])


class OracleNonConvergence(SolverFailure):
    """Projected Gauss-Seidel ran out of sweeps; ``last_change`` is the final max-norm update."""

    def __init__(self, message, last_change, sweeps):
        super().__init__(message, context={"sweeps": sweeps})
        self.last_change = last_change
        self.sweeps = sweeps
