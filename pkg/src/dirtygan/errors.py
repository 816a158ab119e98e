"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes (config=2, data=3, divergence=4),
so library code should raise the most specific class that applies.
"""


class DirtyGanError(Exception):
    """Base class for all package errors."""


class ConfigError(DirtyGanError):
    """Invalid configuration value or unknown option."""


class DataError(DirtyGanError):
    """Malformed or unusable input data (bad CSV cell, empty column, ...)."""


class ContractError(DirtyGanError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes do not conform to an operation's signature."""


class DivergenceError(DirtyGanError):
    """A training loss became non-finite.

    Carries the component and step so the failure can be located.
    """

    def __init__(self, component: str, step: str, value: float):
        self.component = component
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss ({value!r}) in component '{component}' during step '{step}'"
        )
