"""Exception hierarchy for the toolkit.

Every domain failure raised on purpose derives from SpmError so the CLI can
map it to a nonzero-but-not-crash exit code. Names mirror the condition they
report; modules import the ones they need.
"""


class SpmError(Exception):
    """Base class for all domain errors raised by spmtk."""


# --- file formats / manifest ---

class BadMagicError(SpmError):
    pass


class BadVersionError(SpmError):
    pass


class TruncatedPayloadError(SpmError):
    pass


class NonFinitePixelError(SpmError):
    pass


class UnsupportedMaxvalError(SpmError):
    pass


class HeaderParseError(SpmError):
    pass


class ConstantInputError(SpmError):
    pass


class NonFiniteInputError(SpmError):
    pass


class DuplicateIdError(SpmError):
    pass


class MissingFieldError(SpmError):
    pass


class DanglingPathError(SpmError):
    pass


# --- artefact simulation ---

class RowOutOfRangeError(SpmError):
    pass


class EmptyBandError(SpmError):
    pass


class KernelLargerThanFrameError(SpmError):
    pass


class MismatchedDimensionsError(SpmError):
    pass


class PatchOutOfBoundsError(SpmError):
    pass


class EmptyDonorMaskError(SpmError):
    pass


# --- mask pipeline ---

class WrongChannelError(SpmError):
    pass


class EmptyMaskError(SpmError):
    pass


# --- classical inpainting ---

class DidNotConvergeError(SpmError):
    pass


class MaskTouchesEntireFrameError(SpmError):
    pass


class NoValidSourcePatchError(SpmError):
    pass


class InsufficientSupportError(SpmError):
    pass


class RankDeficientError(SpmError):
    pass


# --- autodiff / training ---

class ShapeMismatchError(SpmError):
    pass


class EmptyOmegaError(SpmError):
    pass


class BadTimestepError(SpmError):
    pass


class UnknownTargetError(SpmError):
    pass


class DuplicateAdapterError(SpmError):
    pass


class InsufficientDataError(SpmError):
    pass


class MissingBackboneError(SpmError):
    pass


class EmptyManifestError(SpmError):
    pass


class UntrainedModelError(SpmError):
    pass


# --- metrics / stats ---

class FrameTooSmallError(SpmError):
    pass


class LengthMismatchError(SpmError):
    pass


class ZeroVarianceError(SpmError):
    pass


# --- bench / service ---

class MethodFailedError(SpmError):
    pass


class ManifestInvalidError(SpmError):
    pass


class PortInUseError(SpmError):
    pass


class DatasetLockedError(SpmError):
    pass


class RleInvalidError(SpmError):
    pass


class InvalidTransitionError(SpmError):
    pass
