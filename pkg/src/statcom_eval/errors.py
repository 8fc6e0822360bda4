"""Exception types shared across the package."""


class StatcomEvalError(Exception):
    """Base class for all errors raised by this package."""


class InputError(StatcomEvalError, ValueError):
    """Bad user-supplied data (files, settings, arguments)."""


# records
class MalformedConfig(InputError):
    pass


class ChannelCountMismatch(InputError):
    pass


class SampleCountMismatch(InputError):
    pass


class EmptyRecording(InputError):
    pass


class ChannelNotFound(InputError, KeyError):
    pass


class IncommensurateRate(InputError):
    pass


class MissingPhaseChannels(InputError):
    pass


# simcore
class StepTooLarge(StatcomEvalError, ValueError):
    pass


class MissingPlaybackSample(StatcomEvalError, ValueError):
    pass


# gaintune
class NotSettled(StatcomEvalError):
    pass


class ZeroDeltaV(StatcomEvalError):
    pass


class NonMonotonic(StatcomEvalError):
    pass


class IllConditioned(StatcomEvalError):
    pass


class GainOutOfRange(InputError):
    pass


class NoRootInBracket(StatcomEvalError):
    pass


# evalpipe
class SchemaError(InputError):
    pass


class RangeError(InputError):
    pass


class LengthMismatch(StatcomEvalError, ValueError):
    pass


class PreludeUnstable(StatcomEvalError):
    pass


# synthgen
class OverlappingDips(InputError):
    pass
