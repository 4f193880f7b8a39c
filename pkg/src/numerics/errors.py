"""
Exceptions raised by the numeric core
"""


class NumericsError(Exception):
    """Base class for numeric core errors"""
    pass


class ShapeError(NumericsError):
    """Exception raised when operand shapes are inconsistent"""
    pass


class DegenerateMaskError(NumericsError):
    """Exception raised when a softmax row has no unmasked entry"""
    pass


class NonFiniteError(NumericsError):
    """Exception raised when an operation produces NaN or Inf"""
    pass


class ParameterError(NumericsError):
    """Exception raised for invalid operation parameters"""
    pass


class TapeUsageError(NumericsError):
    """Exception raised when a tape is used incorrectly"""
    pass
