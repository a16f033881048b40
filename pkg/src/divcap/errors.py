"""Exception hierarchy shared by all divcap modules."""


class DivcapError(Exception):
    """Base class for all errors raised by this package."""


# -- parameter validation -----------------------------------------------------

class NonPositiveSigma(DivcapError):
    pass


class NonPositiveQ(DivcapError):
    pass


class BetaNotAboveOne(DivcapError):
    pass


# -- rate-cap construction / evaluation ---------------------------------------

class NotConcave(DivcapError):
    pass


class NotNondecreasing(DivcapError):
    pass


class NegativeAtZero(DivcapError):
    pass


class NegativeArgument(DivcapError):
    pass


class ArgumentOutOfRange(DivcapError):
    pass


# -- ODE engine ----------------------------------------------------------------

class ShootingNoBracket(DivcapError):
    pass


class DomainTooSmall(DivcapError):
    pass


class OutOfDomain(DivcapError):
    pass


# -- barrier solver ------------------------------------------------------------

class SingularDenominator(DivcapError):
    pass


class NoBracketFound(DivcapError):
    pass


class InconsistentDiscriminants(DivcapError):
    pass


# -- Monte Carlo oracle ----------------------------------------------------------

class TruncationTooLoose(DivcapError):
    pass


# -- configuration ---------------------------------------------------------------

class ConfigError(DivcapError):
    """Bad or missing key in a run configuration."""
