"""Exception hierarchy shared by every module in the package."""


class LeeError(Exception):
    pass


class NumericsError(LeeError):
    pass


class DegenerateEmbedding(NumericsError):
    """Raised when a cosine similarity is requested for a zero-norm vector."""


class LabelError(LeeError):
    pass


class ConfigError(LeeError):
    pass


class ProtocolError(LeeError):
    pass


class MetricsError(LeeError):
    pass


class DataError(LeeError):
    pass


class DatasetError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateAxis(DataError):
    pass


class CheckpointError(LeeError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class EmptyInputError(LeeError):
    """Nothing to work on, such as a results directory without any runs."""
