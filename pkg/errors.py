"""
Exception hierarchy shared by all packages.

Every error raised on purpose derives from LocalizationError so callers
(the CLI in particular) can separate input problems from runtime failures.
"""


class LocalizationError(Exception):
    """Root of all errors raised by this project."""


class ConfigError(LocalizationError):
    """Invalid or unknown configuration key/value."""


# ============================================================================
# WORLD MAP
# ============================================================================


class MapFormatError(LocalizationError):
    """Malformed map stream; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int | None = None):
        location = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{location}: {message}")
        self.line = line
        self.column = column


class PoseOutOfBoundsError(LocalizationError):
    """A pose lies outside the map."""


# ============================================================================
# MODELS
# ============================================================================


class SensorModelError(LocalizationError):
    """Base class for sensor model problems."""


class InsufficientDataError(SensorModelError):
    """Too few pairs to fit the beam model."""


class DegenerateDataError(SensorModelError):
    """Fit data carries no information (all pairs identical)."""


class TableTooLargeError(SensorModelError):
    """Sensor table would exceed the configured entry cap."""


class TableFormatError(SensorModelError):
    """Serialized sensor table has a bad header or size."""


class MotionModelError(LocalizationError):
    """Base class for motion model problems."""


class EmptyKernelError(MotionModelError):
    """Every kernel cell was pruned: resolution and noise do not match."""


# ============================================================================
# ESTIMATION
# ============================================================================


class BeliefError(LocalizationError):
    """Base class for belief grid problems."""


class NoFreeSpaceError(BeliefError):
    """The free-space mask holds no cell."""


class BeliefUnderflowError(BeliefError):
    """A perception update drove the total mass below the underflow guard."""


class LogFormatError(LocalizationError):
    """Malformed sensor log line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TimestampRegressionError(LogFormatError):
    """An event is older than its predecessor."""


# ============================================================================
# SIMULATION & EVALUATION
# ============================================================================


class SimulationError(LocalizationError):
    """Base class for simulator problems."""


class PathBlockedError(SimulationError):
    """A scripted command drives the robot out of free space."""

    def __init__(self, message: str, command_index: int):
        super().__init__(f"command {command_index}: {message}")
        self.command_index = command_index


class EvaluationError(LocalizationError):
    """Base class for metric problems."""


class TimestampMismatchError(EvaluationError):
    """Estimate and ground-truth timestamps do not line up."""
