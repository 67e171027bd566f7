"""Exception hierarchy shared by every simulator module."""


class FoxError(Exception):
    """Base class for simulator errors."""


class InvalidArgument(FoxError, ValueError):
    pass


class ResourceExhausted(FoxError):
    pass


class FaultError(FoxError):
    """Access to a virtual address that no mapping covers."""


class CodecError(FoxError, ValueError):
    pass


class NotFound(FoxError, LookupError):
    pass


class SinkError(FoxError, OSError):
    """Backup sink refused a write."""


class ParseError(FoxError, ValueError):
    def __init__(self, message, line, column=None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")
