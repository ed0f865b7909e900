"""Exception hierarchy shared by all gewild modules."""


class GewildError(Exception):
    """Base class; carries a short machine-parsable code for the CLI."""

    code = "error"


class DimensionError(GewildError):
    """Tensor/array shapes incompatible with an operation."""

    code = "dimension"


class ConfigError(GewildError):
    """Invalid configuration value or combination."""

    code = "config"


class DataError(GewildError):
    """Bad input data (missing file, out-of-range label, empty set)."""

    code = "data"


class ParseError(GewildError):
    """Malformed binary or text input. `offset` is the byte offset when known."""

    code = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(GewildError):
    """File is recognized but uses an unsupported codec/depth/layout."""

    code = "unsupported-format"


class IngestionError(GewildError):
    """Manifest row rejected. `line` is the 1-based line number when known."""

    code = "ingestion"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GenerationError(GewildError):
    """Synthetic clip constraints unsatisfiable after retries."""

    code = "generation"


class TrainingError(GewildError):
    """Training aborted (e.g. non-finite loss)."""

    code = "training"


class CheckpointError(GewildError):
    """Checkpoint archive unreadable or incompatible."""

    code = "checkpoint"


class EvalError(GewildError):
    """Prediction/ground-truth sets cannot be compared."""

    code = "eval"


class InternalError(GewildError):
    """Invariant violation inside the library (a bug, not a user error)."""

    code = "internal"
