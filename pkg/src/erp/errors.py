"""Exception hierarchy shared by every module."""


class ERPError(Exception):
    """Base class for all package errors."""


class CorpusEmpty(ERPError):
    pass


class UnknownToken(ERPError):
    def __init__(self, position, unit=None):
        self.position = position
        self.unit = unit
        msg = f"unknown token at position {position}"
        if unit is not None:
            msg += f": {unit!r}"
        super().__init__(msg)


class TerminalState(ERPError):
    pass


class InvalidTemperature(ERPError):
    pass


class InvalidFilter(ERPError):
    pass


class InvalidCritic(ERPError):
    pass


class InvalidConfig(ERPError):
    pass


class RemoteUnavailable(ERPError):
    def __init__(self, endpoint, attempts, cause=None):
        self.endpoint = endpoint
        self.attempts = attempts
        self.cause = cause
        super().__init__(f"{endpoint} unreachable after {attempts} attempt(s): {cause}")


class ProtocolError(ERPError):
    pass


class SpaceTooLarge(ERPError):
    pass


class ReportWriteError(ERPError):
    pass


class FormatVersionError(ERPError):
    pass
