"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, invalid option values, or a bad config file."""


class UsageError(RuntimeError):
    """An operation was called in a state that does not permit it."""


class ResetError(ValueError):
    """An environment was asked to reset to an infeasible state."""


class OptimizerError(RuntimeError):
    """The optimizer received gradients it cannot apply."""
