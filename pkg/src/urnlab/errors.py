"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`UrnlabError`.
The CLI maps the three families below onto exit codes 1, 2 and 3.
"""


class UrnlabError(Exception):
    """Base class."""


class ConfigError(UrnlabError):
    """Bad input: parse failures, invalid models, bad parameters."""


class NumericalError(UrnlabError):
    """Blow-up, particle explosion, failed hitting, broken internal state."""


class StatisticalError(UrnlabError):
    """A statistical test could not be run or did not pass."""


class ExpressionSyntaxError(ConfigError):
    def __init__(self, message, position, text=""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class UnknownIdentifierError(ConfigError):
    def __init__(self, name, position):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at position {position}")


class UnivariateError(ConfigError):
    """'v' used in an expression declared as a function of u only."""


class ModelValidationError(ConfigError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class GridMismatchError(ConfigError):
    pass


class BlowUpError(NumericalError):
    def __init__(self, time):
        self.time = time
        super().__init__(f"non-finite state at t={time:.6g}")


class NotHitError(NumericalError):
    pass


class ExplosionError(NumericalError):
    def __init__(self, time, particles, cap, replica=None):
        self.time = time
        self.particles = particles
        self.cap = cap
        self.replica = replica
        where = "" if replica is None else f" (replica {replica})"
        super().__init__(
            f"particle cap {cap} exceeded at t={time:.6g} with {particles} particles{where}"
        )


class RateIndexError(NumericalError):
    pass


class InvariantError(NumericalError):
    pass


class EnsembleAbortedError(NumericalError):
    pass


class TooFewSamplesError(StatisticalError):
    pass


class HypothesisViolatedError(StatisticalError):
    pass


class InconclusiveError(StatisticalError):
    pass
