class MfaError(ValueError):
    """Base class for errors raised by mfakit."""


class SingularMatrixError(MfaError):
    pass


class IndefiniteMatrixError(MfaError):
    """A matrix that has to be positive definite is not."""


class DegeneratePointError(MfaError):
    """Every component assigns zero density to a data point."""


class ParseError(MfaError):
    pass


class ModelFileError(MfaError):
    """A model file is malformed or violates a model invariant."""
