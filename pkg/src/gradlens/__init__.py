"""Active gradient-inversion attacks on federated learning and the OASIS
augmentation defense, with exact per-sample gradient ground truth."""

from .errors import (
    ConfigError,
    ContractViolation,
    GradlensError,
    NonInvertible,
    NumericError,
    ParseError,
    PreconditionError,
)

__version__ = "0.1.0"
