"""Exception types shared across the simulator."""


class SpecrunError(Exception):
    """Base class for every error raised by this package."""


class AsmError(SpecrunError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScopeError(SpecrunError):
    pass


class TrapError(SpecrunError):
    pass


class AddressError(SpecrunError):
    pass


class SimError(SpecrunError):
    pass


class ConfigError(SpecrunError):
    pass


class ParamError(SpecrunError):
    pass


class SearchError(SpecrunError):
    pass
