"""Exception types shared across the package."""


class AmorphError(Exception):
    """Base class for all package errors."""


class InvalidActionError(AmorphError):
    """Action vector has wrong arity or non-finite entries."""


class SimulationDivergedError(AmorphError):
    """A particle position became non-finite during stepping."""

    def __init__(self, step_index: int, message: str = ""):
        self.step_index = step_index
        super().__init__(message or f"simulation diverged at step {step_index}")


class ConfigurationError(AmorphError):
    """Invalid configuration value or scene setup failure."""


class ObservationError(AmorphError):
    """Observation assembly produced a non-finite channel."""


class CheckpointError(AmorphError):
    """Checkpoint file is malformed or incompatible."""
