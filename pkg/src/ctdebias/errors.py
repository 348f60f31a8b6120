"""Exception hierarchy shared by the library and the command line."""


class CtdebiasError(Exception):
    """Base class for all library errors."""


class ConfigError(CtdebiasError, ValueError):
    """Invalid specification, configuration or input shape."""


class NumericalError(CtdebiasError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class SingularGramError(NumericalError):
    """The normal-equation matrix of an estimator is not invertible.

    Carries the persistency-of-excitation statistic of the covariates so the
    caller can tell an unexciting trajectory from an over-correction.
    """

    def __init__(self, message, pe_stat=float("nan"), method=None):
        super().__init__(message)
        self.pe_stat = pe_stat
        self.method = method


class CorrectedGramError(SingularGramError):
    """The bias-corrected gram matrix lost definiteness (over-correction)."""


class IntegrationError(NumericalError):
    """The ODE integrator failed before reaching the final time."""

    def __init__(self, message, t_fail=float("nan")):
        super().__init__(message)
        self.t_fail = t_fail
