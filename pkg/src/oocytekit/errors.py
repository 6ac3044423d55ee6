"""Exception hierarchy.

Every error raised on bad input data derives from :class:`OocyteError`, which
the command line maps to exit code 2.
"""


class OocyteError(Exception):
    """Base class for data errors."""


# imagery
class MissingFile(OocyteError, FileNotFoundError):
    pass


class MalformedHeader(OocyteError):
    pass


class TruncatedPayload(OocyteError):
    pass


class InvalidLabel(OocyteError):
    pass


class IoFailure(OocyteError, OSError):
    pass


class ManifestError(OocyteError):
    pass


# synth
class SpecOutOfFrame(OocyteError):
    pass


# morphology / geometry / texture
class EmptyInput(OocyteError):
    pass


class FrameTooSmall(OocyteError):
    pass


class InsufficientPoints(OocyteError):
    pass


class DegenerateConfiguration(OocyteError):
    pass


class NonpositiveArea(OocyteError):
    pass


class MissingCytoplasm(OocyteError):
    pass


class MissingZona(OocyteError):
    pass


class ImageTooSmall(OocyteError):
    pass


class EmptyMask(OocyteError):
    pass


# features / svm / eval
class TooFewSamples(OocyteError):
    pass


class DimensionMismatch(OocyteError, ValueError):
    pass


class DegenerateLabels(OocyteError, ValueError):
    pass


class TooFewPerClass(OocyteError, ValueError):
    pass


class SizeMismatch(OocyteError, ValueError):
    pass


class SingleClass(OocyteError, ValueError):
    pass


class LengthMismatch(OocyteError, ValueError):
    pass


class EmptySample(OocyteError, ValueError):
    pass
