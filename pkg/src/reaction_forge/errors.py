"""Exception types shared across the package."""


class ReactionForgeError(Exception):
    """Base class for all package errors."""


class InputShapeError(ReactionForgeError):
    """An array argument has the wrong shape or dtype."""


class ContractError(ReactionForgeError):
    """An operation was called outside its contract (non-scalar loss, bad enum...)."""


class TrainingDivergenceError(ReactionForgeError):
    """Non-finite gradients/advantages or a loss that ran away."""


class SimulationBlowupError(ReactionForgeError):
    """The integrator produced non-finite or absurd state."""

    def __init__(self, message: str, step_index: int):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


class MotionFormatError(ReactionForgeError):
    """A motion or checkpoint file is malformed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(ReactionForgeError):
    """Invalid run configuration. CLI maps this to exit code 2."""


class StageError(ReactionForgeError):
    """A pipeline stage failed. CLI maps this to exit code 3."""
