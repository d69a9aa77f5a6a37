"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericDomainError -> 4. Everything else is a plain bug and escapes.
"""


class SstError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(SstError):
    """Operand shapes are incompatible for the requested operation."""


class UnsupportedPrimitiveError(SstError):
    """An op id that the primitive table does not define."""


class NumericDomainError(SstError):
    """A computation produced NaN/Inf in checked mode, or diverged."""


class ContractError(SstError):
    """An API precondition was violated (caller bug, not data)."""


class ParameterError(SstError):
    """A structurally invalid hyperparameter (e.g. patch longer than input)."""


class ConfigError(SstError):
    """Bad or unknown configuration keys/values."""


class DataError(SstError):
    """Unreadable, malformed, or insufficient input data."""


class MemoryCapExceededError(SstError):
    """Live tensor bytes exceeded the configured synthetic cap."""

    def __init__(self, requested: int, live: int, cap: int):
        super().__init__(
            f"allocation of {requested} bytes would raise live tensor "
            f"memory to {live} bytes, over the {cap}-byte cap"
        )
        self.requested = requested
        self.live = live
        self.cap = cap
