"""Exception types shared across the package.

Three failure families are kept apart so callers can react differently:
bad experiment setup (ConfigError), bad runtime values handed to an
operation (InputError), and malformed on-disk data (IdxFormatError).
Broken internal invariants raise plain RuntimeError.
"""


class ConfigError(ValueError):
    """Invalid experiment or component configuration."""


class InputError(ValueError):
    """Operation received values outside its contract."""


class IdxFormatError(ValueError):
    """Malformed IDX file; carries the byte offset of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
