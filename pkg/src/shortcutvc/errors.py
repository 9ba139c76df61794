"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's preconditions."""


class ConfigurationError(RuntimeError):
    """A component is missing, misconfigured, or incompatible."""


class FormatError(ValueError):
    """A file or container does not have the expected layout."""
