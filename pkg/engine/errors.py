"""
Exception types shared by every StreamHead module.
Library code raises these; ui/cli.py maps them to process exit codes.
"""


class StreamHeadError(Exception):
    """Base class for all StreamHead errors."""


class ShapeError(StreamHeadError, ValueError):
    """Vector/matrix dimensions do not match."""


class DomainError(StreamHeadError, ValueError):
    """A value lies outside its documented range."""


class LabelError(StreamHeadError, ValueError):
    """A class index is not valid for the current head."""


class LabelGapError(LabelError):
    """A label skipped ahead; classes must first appear as 0, 1, 2, ..."""


class CapacityError(StreamHeadError):
    """The softmax head cannot grow beyond its class limit."""


class UnsupportedError(StreamHeadError):
    """The requested operation is not defined for this model or rule."""


class UnsupportedPairingError(UnsupportedError):
    """A gradient rule has no loss whose exact gradient it is."""


class FormatError(StreamHeadError):
    """A serialized file is malformed."""

    def __init__(self, message, offset=None):
        """
        Args:
            message: What went wrong
            offset: Byte offset (binary files) or row index (CSV) of the problem
        """
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class FitError(StreamHeadError):
    """Preprocessing could not be fitted on the given corpus."""


class ConvergenceError(StreamHeadError):
    """Offline training did not reduce the loss."""

    def __init__(self, message, loss_curve):
        self.loss_curve = list(loss_curve)
        super().__init__(message)


class UndefinedMetricError(StreamHeadError):
    """A metric was requested before any sample was recorded."""


class MissingInputError(StreamHeadError):
    """A command's input file (corpus, model, preproc) does not exist yet."""

    def __init__(self, path, hint=""):
        self.path = path
        message = f"missing input {path}"
        super().__init__(f"{message}; {hint}" if hint else message)
