"""Exception hierarchy shared by the library and the command line."""


class UrsError(Exception):
    """Base class for all library errors."""


class ShapeError(UrsError, ValueError):
    """Array dimensions do not agree."""


class DomainError(UrsError, ValueError):
    """An argument lies outside the domain of a function."""


class ContractError(UrsError, ValueError):
    """A caller violated a documented precondition."""


class NumericalError(UrsError, ArithmeticError):
    """A numerical routine failed (non-convergence, singular matrix, ...)."""


class PropagationError(NumericalError):
    """A map returned non-finite values on a sigma point."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(UrsError, ValueError):
    """Configuration validation failed. ``problems`` lists every violation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(UrsError, ValueError):
    """Input data could not be parsed or aligned.

    ``diagnostics`` holds per-row messages (with line numbers when known).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])
