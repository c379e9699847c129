"""Exception hierarchy shared by all modules."""


class PulseSwitchError(Exception):
    """Base class for every error raised by the package."""


class DomainError(PulseSwitchError, ValueError):
    """A state left the region where a rational term is defined."""


class IntegrationError(PulseSwitchError):
    """Integration aborted; ``trajectory`` holds what was computed so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class StepSizeCollapse(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


class NoEquilibriumFound(PulseSwitchError):
    pass


class NoBifurcationInRange(PulseSwitchError):
    pass


class UpperBoundTooSmall(PulseSwitchError):
    pass


class MonotoneViolation(PulseSwitchError):
    """Sampled data contradict the monotone-separatrix structure."""

    def __init__(self, message, witnesses=()):
        super().__init__(message)
        self.witnesses = list(witnesses)


class EmptyFrontier(PulseSwitchError):
    pass


class NotNearMonotone(PulseSwitchError):
    pass


class NoParameterOrder(PulseSwitchError):
    pass


class NoEventsFired(PulseSwitchError):
    def __init__(self, message, trajectory=None, log=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.log = log


class ConfigError(PulseSwitchError, ValueError):
    """Invalid run configuration; ``problems`` lists every offending field."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnknownParameter(ConfigError, KeyError):
    pass
