from typing import Any, Optional


class KdsrError(Exception):
    """Base class for every failure the engine reports; `code` is the stable CLI prefix."""

    code = "error"


class ArgumentError(KdsrError, ValueError):
    code = "argument"


class DimensionError(KdsrError, ValueError):
    code = "dimension"


class ShapeError(KdsrError, ValueError):
    code = "shape"


class ConfigError(KdsrError, ValueError):
    code = "config"


class ParseError(KdsrError, ValueError):
    code = "parse"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(KdsrError, ValueError):
    code = "empty-dataset"


class SplitError(KdsrError, ValueError):
    code = "split"


class ItemLookupError(KdsrError, IndexError):
    code = "lookup"


class DegenerateVectorError(KdsrError, ValueError):
    code = "degenerate-vector"


class UndefinedCorrelationError(KdsrError, ValueError):
    code = "undefined-correlation"


class SelfPairError(KdsrError, ValueError):
    code = "self-pair"


class NumericError(KdsrError, ArithmeticError):
    code = "numeric"


class TeacherTrainingError(KdsrError, RuntimeError):
    code = "teacher-training"


class TrainingError(KdsrError, RuntimeError):
    code = "training"

    def __init__(self, message: str, snapshot: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class CheckpointError(KdsrError, RuntimeError):
    code = "checkpoint"


class FileRefusalError(KdsrError, FileExistsError):
    code = "file-exists"


class MissingInputError(KdsrError, FileNotFoundError):
    code = "missing-input"
