"""Exception taxonomy, grouped by the CLI exit code each family maps to."""


class LevaeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(LevaeError):
    """Invalid configuration or arguments (exit code 2)."""

    exit_code = 2


class DataError(LevaeError):
    """Bad or missing input data / files (exit code 3)."""

    exit_code = 3


class NumericError(LevaeError):
    """Numeric failure: divergence, overflow, infeasible computation (exit code 4)."""

    exit_code = 4


# -- configuration ------------------------------------------------------------

class ConfigInvalid(ConfigError):
    pass


class SpecInvalid(ConfigError):
    pass


# -- data ----------------------------------------------------------------------

class EmptyCorpus(DataError):
    pass


class MalformedLabel(DataError):
    pass


class IoError(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class VocabHashMismatch(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class UnequalLength(DataError):
    pass


class EmptySequence(DataError):
    pass


class EmptyReference(DataError):
    pass


# -- numerics ------------------------------------------------------------------

class DivergentKernel(NumericError):
    pass


class TailTooLarge(NumericError):
    pass


class EnumerationTooLarge(NumericError):
    pass


class LatentTooLarge(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass
