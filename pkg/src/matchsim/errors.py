"""Exception hierarchy shared by all matchsim modules."""


class MatchsimError(ValueError):
    """Base class for every error raised by matchsim."""


class NegativeRate(MatchsimError):
    pass


class InvalidState(MatchsimError):
    pass


class Unbounded(MatchsimError):
    pass


class TooLarge(MatchsimError):
    pass


class OffManifold(MatchsimError):
    """Raised when a scaled state has no zero coordinate."""


class NotPSD(MatchsimError):
    pass


class BadBand(MatchsimError):
    pass


class BadInit(MatchsimError):
    pass


class StepTooLarge(MatchsimError):
    pass


class EmptyWindow(MatchsimError):
    pass


class EmptySample(MatchsimError):
    pass


class TooFew(MatchsimError):
    pass


class ConfigError(MatchsimError):
    """Invalid experiment configuration.

    ``errors`` holds every problem found, not only the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
