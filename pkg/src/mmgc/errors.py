"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class UnknownInputError(KeyError):
    """A named expression input does not exist."""


class SecondOrderUnsupportedError(RuntimeError):
    """A primitive on the second-order path does not support re-differentiation."""


class InvalidConfigError(ValueError):
    """A configuration object violates its invariants."""


class DatasetFormatError(ValueError):
    """An on-disk dataset is malformed; the message names the offending file."""

    def __init__(self, filename: str, message: str):
        super().__init__(f"{filename}: {message}")
        self.filename = filename


class DivergenceError(RuntimeError):
    """The condensation loop produced a non-finite loss."""

    def __init__(self, outer: int, inner: int, quantity: str):
        super().__init__(
            f"non-finite {quantity} at outer step {outer}, inner step {inner}"
        )
        self.outer = outer
        self.inner = inner
        self.quantity = quantity


class IncompatibleShapesError(ValueError):
    """Two artifacts (e.g. condensed graph and original dataset) do not fit together."""
