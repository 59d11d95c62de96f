"""Exception hierarchy shared by every gradlens module."""


class GradlensError(Exception):
    """Base class for all library errors."""


class ContractViolation(GradlensError, ValueError):
    """A caller broke an operation's precondition (shapes, ranges, emptiness)."""


class PreconditionError(ContractViolation):
    """A modelling assumption of an attack does not hold for the given input."""


class NumericError(GradlensError, ArithmeticError):
    def __init__(self, tensor: str, detail: str = "non-finite values"):
        super().__init__(f"{detail} in {tensor}")
        self.tensor = tensor


class NonInvertible(GradlensError, ArithmeticError):
    """Bias gradient too small to divide by: the neuron is dead or cancelling."""


class ConfigError(GradlensError, ValueError):
    pass


class ParseError(GradlensError, ValueError):
    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.line = line
