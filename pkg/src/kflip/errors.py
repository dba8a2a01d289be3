"""Exception hierarchy shared by all kflip modules."""


class KFlipError(Exception):
    """Base class for numerical and domain errors raised by kflip."""


class InvalidParameter(KFlipError, ValueError):
    pass


class SubcriticalTemperature(KFlipError):
    """beta*J does not exceed the critical value, so there is no hysteresis."""


class NoMetastableState(KFlipError):
    """The three-root (metastable/unstable/stable) structure is absent."""


class QuadratureFailure(KFlipError):
    pass


class OverflowGuard(KFlipError):
    pass


class InstanceTooLarge(KFlipError):
    pass


class DegenerateSigma(KFlipError):
    pass


class SingularSystem(KFlipError):
    pass


class NonPositiveStationary(KFlipError):
    pass


class IllConditioned(KFlipError):
    pass


class NegativeVariance(KFlipError):
    pass


class Censored(KFlipError):
    """A Monte Carlo sample reached ``max_steps`` without hitting the target."""

    def __init__(self, steps):
        super().__init__(f"sample censored after {steps} steps")
        self.steps = steps


class AllCensored(KFlipError):
    pass
