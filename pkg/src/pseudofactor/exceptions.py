"""Exception hierarchy for pseudofactor."""


class PseudoFactorError(ValueError):
    """Base class for all errors raised by this package."""


class InvalidInputError(PseudoFactorError):
    """Panel or weight data violate their invariants."""


class InvalidParamsError(PseudoFactorError):
    """Model parameters are outside the admissible region."""


class UnidentifiableIndicatorError(PseudoFactorError):
    """An indicator carries no weight (or too few observations) to be estimated."""


class DegenerateIndicatorError(PseudoFactorError):
    """An indicator has zero (weighted) variance."""


class DataFormatError(PseudoFactorError):
    """A data file could not be parsed."""
