"""Exception hierarchy shared across the package."""


class IncentFedError(Exception):
    pass


class GameAssumptionError(IncentFedError):
    """The participation game violates strong monotonicity, or its NE oracle failed."""


class NumericalAbort(IncentFedError):
    """A parameter vector became non-finite during a run."""

    def __init__(self, message, round_index=None, iteration=None, client=None):
        super().__init__(message)
        self.round_index = round_index
        self.iteration = iteration
        self.client = client


class UnsupportedFamily(IncentFedError):
    pass


class ConfigError(IncentFedError):
    pass
