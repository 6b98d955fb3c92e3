"""Exception types shared across the package."""


class EmoError(Exception):
    """Base class for all package errors."""


class ValidationError(EmoError, ValueError):
    pass


class DimensionError(ValidationError):
    pass


class DegenerateVectorError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class RegistryError(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnsupportedError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class CoverageError(ValidationError):
    pass


class ModelFormatError(ValidationError):
    def __init__(self, message, offset=None):
        super().__init__(f"{message} (offset {offset})" if offset is not None else message)
        self.offset = offset


class UnsupportedVersionError(ModelFormatError):
    pass


class DivergenceError(EmoError, RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class EmptyGraphError(EmoError, RuntimeError):
    pass
