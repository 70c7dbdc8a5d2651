"""Exception taxonomy shared by every module."""


class ZOError(Exception):
    """Base class for all library errors."""


class DomainError(ZOError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(ZOError, ValueError):
    """A combination of settings is unsupported or violates an assumption."""
