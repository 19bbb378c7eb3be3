"""Exception types shared across the package."""


class InputError(ValueError):
    """An operation received arguments that violate its contract."""


class ConfigurationError(ValueError):
    """An experiment or protocol configuration is infeasible or inconsistent."""


class FormatError(ValueError):
    """A file does not conform to its declared binary/text format.

    Carries the byte offset at which parsing failed when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ProtocolError(RuntimeError):
    """A message (e.g. an evaluation report) falls outside the agreed plan."""
