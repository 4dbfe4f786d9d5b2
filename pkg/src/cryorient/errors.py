"""Exception and warning types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInput(ValueError):
    """Raw network output cannot be mapped to a rotation (zero norm, parallel vectors)."""


class DegenerateRepresentation(ArithmeticError):
    """The QCQP matrix has a (numerically) repeated smallest eigenvalue."""


class DegenerateRepresentationWarning(RuntimeWarning):
    pass


class TrainingDiverged(RuntimeError):
    """A non-finite loss or activation was produced during training."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
