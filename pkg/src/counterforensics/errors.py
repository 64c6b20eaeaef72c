from __future__ import annotations

from collections.abc import Sequence


class CounterForensicsError(Exception):
    pass


class InvalidArgumentError(CounterForensicsError, ValueError):
    pass


class ShapeMismatchError(InvalidArgumentError):
    def __init__(self, layer: str, message: str) -> None:
        self.layer = layer
        super().__init__(f"{layer}: {message}")


class PgmParseError(CounterForensicsError):
    def __init__(self, message: str, *, offset: int, path: str | None = None) -> None:
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class ConfigError(CounterForensicsError):
    pass


class UnsupportedOperationError(CounterForensicsError):
    pass


class UnsupportedTargetError(CounterForensicsError):
    def __init__(self, variant: str, message: str | None = None) -> None:
        self.variant = variant
        text = message or (
            f"Detector variant {variant!r} is not differentiable; "
            "use icm_attack for feature-space targets"
        )
        super().__init__(text)


class TrainingDivergedError(CounterForensicsError):
    def __init__(self, message: str, *, loss_trace: Sequence[float] = ()) -> None:
        self.loss_trace = list(loss_trace)
        super().__init__(message)


class DegenerateKernelError(CounterForensicsError):
    def __init__(self, off_center_sum: float) -> None:
        self.off_center_sum = off_center_sum
        super().__init__(
            f"Constrained kernel has off-center sum {off_center_sum!r}; cannot project"
        )


class IntegrityError(CounterForensicsError):
    pass


class ModelFormatError(CounterForensicsError):
    pass
