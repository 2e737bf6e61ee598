"""Exception types raised across the package.

Everything derives from :class:`UsgaitError`.  Subclasses of
:class:`InputError` describe malformed or insufficient input data (the CLI
maps them to exit status 1); the rest are numerical/runtime failures.
"""


class UsgaitError(Exception):
    pass


class InputError(UsgaitError, ValueError):
    pass


# frames
class MagicMismatch(InputError):
    pass


class UnsupportedVersion(InputError):
    pass


class TruncatedFrameData(InputError):
    pass


class NonMonotonicTimestamps(InputError):
    pass


class EmptyTrial(InputError):
    pass


class MalformedRow(InputError):
    pass


class NoOverlap(InputError):
    pass


# features
class FrameTooSmall(InputError):
    pass


class ZeroTimeDelta(InputError):
    pass


class MisalignedRows(InputError):
    pass


# gait
class InsufficientEvents(InputError):
    pass


class TooFewSamples(InputError):
    pass


class EmptyInput(InputError):
    pass


# gpr
class DimensionMismatch(InputError):
    pass


class DegenerateTargets(InputError):
    pass


class NotPositiveDefinite(UsgaitError):
    pass


class ModelFormatError(InputError):
    pass


# experiment
class TooFewStrides(InputError):
    pass


class TooFewTrials(InputError):
    pass


class LengthMismatch(InputError):
    pass


# stats
class IncompleteDesign(InputError):
    pass
