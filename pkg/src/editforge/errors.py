"""Exception hierarchy shared across editforge."""


class EditforgeError(Exception):
    """Base class for every error raised by this package."""


# taxonomy / core
class UnknownSubTask(EditforgeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidTransition(EditforgeError, ValueError):
    pass


# imaging
class NotAdmitted(EditforgeError, ValueError):
    pass


class DimensionMismatch(EditforgeError, ValueError):
    pass


class TooSmall(EditforgeError, ValueError):
    pass


class DecodeFailure(EditforgeError):
    pass


# gateway
class GatewayError(EditforgeError):
    pass


class Exhausted(GatewayError):
    def __init__(self, message, attempts=0, last_error=None):
        super().__init__(message)
        self.attempts = attempts
        self.last_error = last_error


class BadRequest(GatewayError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class MalformedReply(GatewayError):
    pass


class NoJsonFound(EditforgeError, ValueError):
    pass


class DuplicateTopLevel(EditforgeError, ValueError):
    pass


class StoreUnavailable(EditforgeError):
    pass


# curation
class TooFew(EditforgeError):
    pass


class ParseFailure(EditforgeError):
    pass


class ConfigInvalid(EditforgeError, ValueError):
    pass


# scoring
class MissingMetric(EditforgeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyGroundTruth(EditforgeError, ValueError):
    pass


class ZeroVector(EditforgeError, ValueError):
    pass


# bench
class SchemaViolation(EditforgeError, ValueError):
    pass


class ShapeViolation(EditforgeError, ValueError):
    pass


class MissingReasoningPoints(EditforgeError, ValueError):
    pass


class JudgeUnparseable(EditforgeError):
    pass


class IncompleteVerdicts(EditforgeError, ValueError):
    pass


class NoScoredCases(EditforgeError):
    pass
