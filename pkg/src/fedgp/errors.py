"""Exception hierarchy shared by all fedgp modules."""


class FedGPError(Exception):
    """Base class for every error raised by fedgp."""


class InputShapeError(FedGPError, ValueError):
    """Array shapes or dimensions do not agree."""


class ParameterDomainError(FedGPError, ValueError):
    """A parameter or input lies outside its admissible domain."""


class ConfigError(FedGPError, ValueError):
    """Invalid configuration value or combination of values."""


class NumericalError(FedGPError, ArithmeticError):
    """Cholesky factorization failed even after jitter escalation.

    Attributes
    ----------
    jitters : list of float
        Jitter levels that were tried, in order.
    """

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = list(jitters)


class NumericalWarning(UserWarning):
    """Round-off large enough to be worth reporting, but not fatal."""


class FederationError(FedGPError):
    """A client failed during a federated run.

    Carries the round and client id so the failure can be located.
    """

    def __init__(self, message, *, round_index=None, client_id=None):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id
