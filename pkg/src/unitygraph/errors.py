"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI reports for it.
"""


class UnityGraphError(Exception):
    exit_code = 1


class ConfigError(UnityGraphError, ValueError):
    exit_code = 2


class DataError(UnityGraphError):
    exit_code = 3


class SceneFormatError(DataError):
    """Scene file violates the JSON schema."""


class ShapeMismatchError(DataError, ValueError):
    """Declared or expected sizes disagree with the tensor shape."""


class NonFiniteError(DataError, ValueError):
    """Input tensor contains NaN or Inf."""


class InsufficientFramesError(DataError, ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


class NumericError(UnityGraphError, FloatingPointError):
    """Activations or losses went non-finite during a forward pass."""

    exit_code = 4


class StepOverflowError(UnityGraphError, IndexError):
    pass


class HorizonOutOfRangeError(UnityGraphError, ValueError):
    pass
