"""
Error types for the UBGAN toolkit

Every failure the toolkit can report is a subclass of UbganError. The
exit_code attribute is what the command-line entry point returns when the
error ends a command.
"""


class UbganError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 2


class FormatError(UbganError):
    """Malformed input: files, shapes, rates, configs"""
    exit_code = 2


class ConsistencyError(UbganError):
    """Inputs are individually valid but disagree with each other"""
    exit_code = 3


class UsageError(UbganError):
    """Bad command line: missing or conflicting flags"""
    exit_code = 1


# pqmf
class UnsupportedBandCount(FormatError):
    pass


class DesignFailure(FormatError):
    pass


class FrameAlignment(FormatError):
    pass


class RateMismatch(FormatError):
    pass


class BandCountMismatch(FormatError):
    pass


# conditioning
class WindowLengthMismatch(FormatError):
    pass


# nnengine
class ShapeMismatch(FormatError):
    pass


class NonIntegralOutputLength(FormatError):
    pass


class NotScalarLoss(FormatError):
    pass


class GraphDetached(FormatError):
    pass


class InvalidConfig(FormatError):
    pass


class BadMagic(FormatError):
    pass


class ShapeTableMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


# generator
class UninitializedState(FormatError):
    pass


class FrameCountMismatch(ConsistencyError):
    pass


# sideinfo
class IndexOutOfRange(FormatError):
    pass


class CodeOutOfRange(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


# adversary
class ZeroReference(FormatError):
    pass


class WrongEnsembleSize(FormatError):
    pass


class ClipTooShort(FormatError):
    pass


class NonFiniteLoss(FormatError):
    pass


# audioio
class UnsupportedFormat(FormatError):
    pass


class NotMono(FormatError):
    pass


class CorruptHeader(FormatError):
    pass


class EmptySignal(FormatError):
    pass
