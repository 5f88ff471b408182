"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config object or construction parameter violates its invariants."""


class CalibrationError(RuntimeError):
    """Pipeline calibration cannot proceed (e.g. not enough data)."""


class TrainingError(ValueError):
    """A classifier training precondition is violated."""


class DegenerateDataError(ValueError):
    """Statistical test input carries no usable information."""


class SimulationRateError(RuntimeError):
    """A trajectory was sampled too coarsely for exact collision detection."""
