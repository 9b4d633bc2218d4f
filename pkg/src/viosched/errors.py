"""Exception types shared across modules."""


class VioSchedError(Exception):
    """Base class for all package errors."""


class InvalidSpec(VioSchedError, ValueError):
    pass


class UnreadableSystemInfo(VioSchedError, OSError):
    pass


class InvalidCoreId(VioSchedError, ValueError):
    pass


class SamplerAlreadyRunning(VioSchedError, RuntimeError):
    pass


class AffinityUnsupported(VioSchedError, OSError):
    pass


class NonMonotonicTimestamp(VioSchedError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class InsufficientWindow(VioSchedError, RuntimeError):
    pass


class UnknownMethod(VioSchedError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ProfileFileError(VioSchedError, ValueError):
    pass


class MalformedRow(VioSchedError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class SchemaMismatch(VioSchedError, ValueError):
    pass


class InvalidTrace(VioSchedError, ValueError):
    pass


class TraceMismatch(VioSchedError, ValueError):
    pass


class UnsupportedOnHost(VioSchedError, RuntimeError):
    pass
