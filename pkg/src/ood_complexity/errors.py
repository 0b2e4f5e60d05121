"""Exception hierarchy. Everything derives from ValueError so callers can catch broadly."""


class OODError(ValueError):
    pass


class EmptyDatasetError(OODError):
    pass


class FormatError(OODError):
    """Unsupported or malformed image / file layout."""


class ParseError(OODError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(OODError):
    pass


class ConfigError(OODError):
    pass


class CodecError(OODError):
    pass


class DecodeError(CodecError):
    pass


class UndefinedCorrelationError(OODError):
    pass
