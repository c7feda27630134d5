"""Exception hierarchy shared across the package.

Errors are split by blame: ConfigError for bad knob values, ContractError
for incompatible arguments between components, DataError for invalid data
content, TensorFileError for the binary container with a machine-readable
code.
"""


class XmrtError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(XmrtError):
    """A configuration value is out of its legal range or missing."""


class ContractError(XmrtError):
    """Arguments are individually fine but mutually incompatible."""


class DataError(XmrtError):
    """Data content violates a documented invariant."""


class TensorFileError(XmrtError):
    """Tensor container violation; `code` identifies the failure kind."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
