"""Exception types shared across the simulator."""


class ParameterError(ValueError):
    """A numeric argument is outside its allowed range."""


class ProtocolError(RuntimeError):
    """The protocol state machine was driven out of order or with bad data."""


class ConfigError(ValueError):
    """An experiment configuration is invalid; carries the offending field name."""
