"""Exception hierarchy shared by all msfpca modules."""


class MsfpcaError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


# dataset
class EmptyInput(MsfpcaError, ValueError):
    pass


class DuplicateObservation(MsfpcaError, ValueError):
    pass


class NonFiniteValue(MsfpcaError, ValueError):
    pass


class ZeroVariance(MsfpcaError, ValueError):
    pass


class DegenerateTimeRange(MsfpcaError, ValueError):
    pass


# basis
class TimeOutOfRange(MsfpcaError, ValueError):
    pass


class RankDeficientBasis(MsfpcaError, ValueError):
    pass


# covariance / model
class DimensionMismatch(MsfpcaError, ValueError):
    pass


# sampler
class NonFiniteDensity(MsfpcaError, RuntimeError):
    pass


class InsufficientChains(MsfpcaError, ValueError):
    pass


# posterior
class RankDeficientLoadings(MsfpcaError, ValueError):
    pass


# association
class SingularSubmatrix(MsfpcaError, ValueError):
    pass


class NegativeMI(MsfpcaError, ValueError):
    pass


# diagnostics
class InsufficientTail(MsfpcaError, ValueError):
    pass


class TooFewDraws(MsfpcaError, ValueError):
    pass


# cli
class ConfigParse(MsfpcaError, ValueError):
    exit_code = 2


class SpecMismatch(MsfpcaError, ValueError):
    exit_code = 2
