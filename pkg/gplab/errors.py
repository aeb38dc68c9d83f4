class GPLabError(Exception):
    """Base class of every error raised by gplab."""


class ConfigError(GPLabError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super(ConfigError, self).__init__("[{}] {}".format(field, message))


class BudgetError(GPLabError, ValueError):
    def __init__(self, what, required, available):
        self.required = required
        self.available = available
        super(BudgetError, self).__init__(
            "{} needs {} entries, budget allows {}".format(what, required, available)
        )


class GridMismatchError(GPLabError, ValueError):
    pass


class DomainError(GPLabError, ValueError):
    pass


class StepCollapseError(GPLabError, RuntimeError):
    pass


class NonFiniteError(GPLabError, ArithmeticError):
    pass


class InvariantError(GPLabError, RuntimeError):
    def __init__(self, invariant, message):
        self.invariant = invariant
        super(InvariantError, self).__init__("{}: {}".format(invariant, message))
