"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration or usage."""


class DataError(ValueError):
    """Malformed or insufficient input data."""


class ShapeError(ValueError):
    """Operand shapes incompatible for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class NumericError(ArithmeticError):
    """A forward op produced a non-finite value."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values in op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
