class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class CapacityError(RuntimeError):
    """Raised when exact enumeration would exceed the configured size limit."""


class ParseError(ValueError):
    """Malformed dataset, model, codebook or config file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnsupportedVersionError(ParseError):
    pass
