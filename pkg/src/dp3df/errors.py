"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input violates a documented precondition (bad shape, bad axis, bad value)."""


class TrainingDiverged(RuntimeError):
    """Loss or a gradient became non-finite during optimization."""


class ContainerFormatError(IOError):
    """A tensor container or image file is malformed or truncated."""
