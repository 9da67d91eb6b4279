"""Exception hierarchy shared by every binsed module."""


class SedError(Exception):
    """Base class for all binsed errors."""


class ValidationError(SedError, ValueError):
    """Input violates a documented precondition."""


class ChannelCountError(ValidationError):
    pass


class UnknownClassError(ValidationError):
    pass


class RateMismatchError(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class NumericError(SedError, ArithmeticError):
    """Non-finite values appeared in activations or gradients."""


class SedIOError(SedError, OSError):
    """Missing, unreadable or truncated file."""


class FormatError(SedError):
    """File contents do not match the expected binary/text layout."""


class UnsupportedFormatError(FormatError):
    pass
