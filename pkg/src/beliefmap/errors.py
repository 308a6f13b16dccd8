"""Exception hierarchy shared by all modules."""


class BeliefMapError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepth(BeliefMapError):
    pass


class InsufficientDepth(BeliefMapError):
    """Too few valid depth samples inside a bounding box; skip the box this frame."""


class EmptyObject(BeliefMapError):
    pass


class EmptyPointSet(BeliefMapError):
    pass


class ClassMismatch(BeliefMapError):
    pass


class UnknownObject(BeliefMapError):
    pass


class NonPositiveDt(BeliefMapError):
    pass


class SingularInnovation(BeliefMapError):
    pass


class InvalidScenario(BeliefMapError):
    pass


class NoMatches(BeliefMapError):
    pass


class DegenerateGeometry(BeliefMapError):
    pass


class ConfigError(BeliefMapError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class ParseError(BeliefMapError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


class IoFailure(BeliefMapError):
    pass
