"""Exception types shared across the package."""


class LoopforgeError(Exception):
    """Base class for every error raised by loopforge."""


class InvalidInputError(LoopforgeError, ValueError):
    pass


class SchemaError(InvalidInputError):
    """Malformed graph description; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.field = field
        self.line = line


class NotGreenError(LoopforgeError, ArithmeticError):
    """I - Q is singular or the weight is outside the admissible class."""


class NotMarkovError(InvalidInputError):
    pass


class TrappedError(LoopforgeError, RuntimeError):
    pass


class StarvationError(LoopforgeError, RuntimeError):
    pass


class PrecisionError(LoopforgeError, ArithmeticError):
    pass


class SizeError(LoopforgeError, ValueError):
    pass


class MismatchError(LoopforgeError, ValueError):
    pass
