"""Exception types shared across the package."""


class GhostforgeError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeError(GhostforgeError):
    """A tensor dimension does not match what an operation requires.

    The message always names the offending axis.
    """

    def __init__(self, axis: str, message: str):
        self.axis = axis
        super().__init__(f"axis {axis!r}: {message}")


class ConfigError(GhostforgeError):
    """A layer or architecture configuration is internally inconsistent."""


class ArchError(GhostforgeError):
    """An architecture graph is malformed (cycle, missing input, bad kind)."""


class CheckpointError(GhostforgeError):
    """A checkpoint file is malformed or inconsistent with the model."""


class DivergenceError(GhostforgeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite loss at step {step}")
