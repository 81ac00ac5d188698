"""Exception types raised across the package."""


class SelectMixError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SelectMixError, ValueError):
    pass


class InputError(SelectMixError, ValueError):
    pass


class SpecError(SelectMixError, ValueError):
    """An invalid configuration value (noise spec, mixing strategy, ...)."""


class FormatError(SelectMixError, ValueError):
    """Malformed IDX or CSV content. ``field`` names the offending part."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingError(SelectMixError, RuntimeError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class PlanError(SelectMixError, ValueError):
    pass


class FoldError(SelectMixError, RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold


class EstimationError(SelectMixError, ValueError):
    pass


class EvaluationError(SelectMixError, ValueError):
    pass


class StageError(SelectMixError, RuntimeError):
    """Wraps an error raised inside one stage of the experiment pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
