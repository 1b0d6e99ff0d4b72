"""Exception hierarchy shared by every module."""


class MgtError(Exception):
    """Base class for all toolkit errors."""


class UnknownPoint(MgtError, KeyError):
    pass


class DimensionMismatch(MgtError, ValueError):
    pass


class DegenerateGrid(MgtError, ValueError):
    pass


class TooManyPoints(MgtError, ValueError):
    pass


class EmptyInput(MgtError, ValueError):
    pass


class RadiusTooSmall(MgtError, ValueError):
    pass


class OutOfDomain(MgtError, ValueError):
    pass


class EmptyField(MgtError, ValueError):
    pass


class NonComponentTarget(MgtError, TypeError):
    pass


class NonCubeDomain(MgtError, ValueError):
    pass


class DepthTooDeep(MgtError, ValueError):
    pass


class NoFullRankMinor(MgtError, ArithmeticError):
    pass


class ChartShrunkToGrid(MgtError, RuntimeError):
    pass


class InvalidSpec(MgtError, ValueError):
    pass


class InvalidLambda(MgtError, ValueError):
    pass


class InvalidDims(MgtError, ValueError):
    pass


class ConfigError(MgtError, ValueError):
    """Configuration problem; ``field`` names the offending key when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
