"""Exception hierarchy shared by the library and the CLI."""


class PPMAError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ParameterError(PPMAError, ValueError):
    exit_code = 2


class ConfigError(PPMAError, ValueError):
    exit_code = 2

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class PositivityError(PPMAError, ArithmeticError):
    """A matrix that must be positive-definite is not.

    ``min_eig`` is the offending smallest eigenvalue and ``location`` the grid
    index where it occurs (``None`` for pointwise calls).
    """

    exit_code = 4

    def __init__(self, message, min_eig=None, location=None):
        self.min_eig = min_eig
        self.location = location
        extra = []
        if min_eig is not None:
            extra.append(f"min_eig={min_eig:.3e}")
        if location is not None:
            extra.append(f"at={tuple(int(i) for i in location)}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)


class NonConvergenceError(PPMAError, RuntimeError):
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class LineSearchError(NonConvergenceError):
    pass


class LinearSolveError(NonConvergenceError):
    pass


class StiffnessError(NonConvergenceError):
    pass


class VerificationFailure(PPMAError, AssertionError):
    exit_code = 5
