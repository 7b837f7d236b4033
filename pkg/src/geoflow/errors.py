class DomainError(ValueError):
    """Parameter or argument outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Shapes, sizes or options that do not fit together."""
