"""Exception types raised across the harness.

Every error derives from :class:`HarnessError`; the ``exit_code`` attribute is
what the command-line front end returns when the error escapes a subcommand.
"""


class HarnessError(Exception):
    exit_code = 1


class ConfigError(HarnessError, ValueError):
    exit_code = 2


class DataError(HarnessError, ValueError):
    exit_code = 3


class Divergence(HarnessError, ArithmeticError):
    """Training loss became non-finite."""

    exit_code = 4


class MissingArtifact(HarnessError, FileNotFoundError):
    exit_code = 5


# signal processing
class EmptySeries(DataError):
    pass


class TooShort(DataError):
    pass


class NoPeaksFound(DataError):
    pass


class TooFewPeaks(DataError):
    pass


class InvalidRate(DataError):
    pass


class LengthMismatch(DataError):
    pass


# generators
class InvalidSpec(ConfigError):
    pass


class UnknownActivity(DataError):
    pass


class NegativeDuration(DataError):
    pass


# tasks
class ShapeMismatch(DataError):
    pass


class VariantUnsupported(ConfigError):
    pass


class InsufficientPool(DataError):
    pass


# language model
class ContextOverflow(DataError):
    pass


class EmptyTrainSet(DataError):
    pass


class CheckpointVersionError(DataError):
    pass


# evaluation / reporting
class ZeroReference(DataError):
    pass


class MixedDatasets(DataError):
    pass


class NoRunsFound(MissingArtifact):
    pass


class MissingCheckpoint(MissingArtifact):
    pass


class IoError(DataError):
    pass


class MixedConfigs(DataError):
    pass
