"""Exception types shared across the codec."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class EncodingError(RuntimeError):
    """Encoding aborted (non-finite loss, degenerate input, ...)."""


class BitstreamError(Exception):
    """Base class for anything wrong with a coded stream."""


class TruncatedStream(BitstreamError):
    """Stream ended before the declared payload was consumed."""


class HeaderError(BitstreamError):
    """Bad magic, unknown version, failed checksum or insane header field."""


class SymbolRangeError(BitstreamError):
    """A decoded symbol fell outside the range declared in the header."""
