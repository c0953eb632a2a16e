"""Exception types shared across the package."""


class FlowLutError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowLutError, ValueError):
    """Operands have incompatible shapes for the requested operation."""


class SizeError(FlowLutError, ValueError):
    """An extent is outside the supported range (e.g. lattice < 2, pool on 1px)."""


class GraphError(FlowLutError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar backward, nested graphs, ...)."""


class CubeParseError(FlowLutError, ValueError):
    """A .cube file does not conform to the expected format.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ImageParseError(FlowLutError, ValueError):
    """An image file is malformed; carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(FlowLutError, ValueError):
    """A checkpoint file is unreadable, truncated, or version-incompatible."""


class TrainingError(FlowLutError, RuntimeError):
    """Training aborted (non-finite loss/gradient, empty dataset, ...)."""
