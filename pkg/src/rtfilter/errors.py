"""Exception hierarchy shared by every rtfilter module."""


class RtFilterError(Exception):
    """Base class for all errors raised by rtfilter."""


class InvalidParameterError(RtFilterError, ValueError):
    """A numeric argument violates its documented domain (dt <= 0, negative decay, ...)."""


class DimensionMismatchError(RtFilterError, ValueError):
    """Two operands disagree on their complex dimension or sequence length."""


class NonUnitDirectionError(RtFilterError, ValueError):
    """An argument that must lie on the unit sphere does not."""


class DegenerateConsensusError(RtFilterError, ArithmeticError):
    """The precision-weighted consensus vanished (antipodal deadlock)."""


class AntipodalError(RtFilterError, ArithmeticError):
    """Great-circle interpolation between antipodal points is undefined."""


class ConfigError(RtFilterError):
    """An experiment config could not be read or validated."""


class ReportError(RtFilterError):
    """A report failed schema validation or could not be written."""
