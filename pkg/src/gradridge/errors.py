"""Exception hierarchy; each class maps to one CLI exit code."""


class GradRidgeError(Exception):
    exit_code = 1


class InputError(GradRidgeError, ValueError):
    """Malformed or inconsistent user input (exit code 2)."""

    exit_code = 2


class CompatibilityError(GradRidgeError, ValueError):
    """Dimension or format mismatch between objects (exit code 3)."""

    exit_code = 3


class NumericalError(GradRidgeError, ArithmeticError):
    """A numerical routine failed: degenerate matrices, non-convergence (exit code 4)."""

    exit_code = 4


class DegenerateFeatureMap(NumericalError):
    pass
