"""Exception hierarchy shared by all modules."""


class SFGLError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ParseError(SFGLError):
    pass


class InputError(SFGLError):
    pass


class ContractError(SFGLError, ValueError):
    pass


class ConfigError(SFGLError, ValueError):
    pass


class DomainError(SFGLError, ValueError):
    pass


class FitError(SFGLError):
    pass


class NumericError(SFGLError, FloatingPointError):
    pass


class TrainingError(SFGLError):
    pass


class StageError(SFGLError):
    """Pipeline stage failure; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
