from typing import Any, Optional


class FastgenError(Exception):
    """Base class for every error the generator reports"""

    exit_code = 2

    def __init__(self, message: str, payload: Optional[Any] = None):
        super().__init__(message)
        self.message = message
        self.payload = payload


class UsageError(FastgenError):
    exit_code = 1


class InputError(FastgenError):
    exit_code = 2


class SchemaError(InputError):
    pass


class TableError(InputError):
    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class SpecError(InputError):
    """Invalid field spec document; `message` is safe to quote in a repair prompt"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.column = column


class PlanError(InputError):
    pass


class GenerationError(InputError):
    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class UniquenessExhausted(GenerationError):
    pass


class MetricError(InputError):
    pass


class ConfigError(InputError):
    pass


class TransportError(FastgenError):
    exit_code = 3


class HTTPStatusError(TransportError):
    def __init__(self, message: str, status_code: int, payload: Optional[Any] = None):
        super().__init__(message, payload)
        self.status_code = status_code


class MalformedResponseError(TransportError):
    pass


class FixtureExhausted(TransportError):
    pass
