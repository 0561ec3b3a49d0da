"""Exception types raised by the library."""


class PltfError(Exception):
    """Base class for all errors raised by ``pltf``."""


class ShapeError(PltfError, ValueError):
    """Index lists or cardinalities do not line up."""


class ValidationError(PltfError, ValueError):
    """A model or observation violates its structural invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SingularModelError(PltfError, ArithmeticError):
    """The model assigns zero intensity to an observed positive count.

    ``cell`` is the offending observed cell (a tuple of indices) when known,
    ``iteration`` the 0-based iteration at which it happened.
    """

    def __init__(self, message, cell=None, iteration=None):
        super().__init__(message)
        self.cell = cell
        self.iteration = iteration
