"""Exception types raised across the toolkit."""


class ValleyError(Exception):
    """Base class for toolkit errors."""


class InfeasibleHypothesesError(ValleyError, ValueError):
    """Inputs violate the preconditions a bound or theorem needs."""


class DivergenceError(ValleyError, FloatingPointError):
    """An iterate or loss left the finite/safe range."""


class TooFewRoundsError(ValleyError, ValueError):
    pass


class OscillationError(ValleyError, RuntimeError):
    """A run that must stay on one side of the minimum crossed it."""


class BudgetExceededError(ValleyError, ValueError):
    pass


class LayoutMismatchError(ValleyError, ValueError):
    pass


class ConfigError(ValleyError, ValueError):
    """Malformed experiment configuration (CLI exit code 2)."""
