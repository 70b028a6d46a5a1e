"""Exception hierarchy shared across the package."""


class ValidationError(ValueError):
    """Bad input: wrong shape, non-finite values, violated preconditions."""


class LinearDependenceError(ValidationError):
    def __init__(self, index, residual_norm, name=None):
        self.index = index
        self.residual_norm = residual_norm
        self.name = name
        label = f"vector {index}" if name is None else f"axis {name!r} (index {index})"
        super().__init__(
            f"{label} is linearly dependent on its predecessors "
            f"(relative residual norm {residual_norm:.3e})"
        )


class DegenerateAttributeError(ValidationError):
    pass


class InseparableAttributeError(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed or incompatible file contents."""


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
