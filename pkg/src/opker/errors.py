"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericError(RuntimeError):
    """A numerical routine failed where the math says it should not (CLI exit code 3)."""


class RankError(ValueError):
    """An eigendecomposition produced fewer usable modes than requested."""

    def __init__(self, message: str, usable_rank: int):
        super().__init__(message)
        self.usable_rank = usable_rank
