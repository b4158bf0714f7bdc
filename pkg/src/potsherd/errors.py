"""Exception hierarchy shared by all pipeline stages."""


class PotsherdError(Exception):
    """Base class for every error raised by this package."""


class MalformedFile(PotsherdError, ValueError):
    pass


class InvariantViolation(PotsherdError, ValueError):
    pass


class EmptyCatalog(PotsherdError, ValueError):
    pass


class AllMissing(PotsherdError, ValueError):
    pass


class CannotIntersect(PotsherdError, RuntimeError):
    pass


class DegenerateSherd(PotsherdError, ValueError):
    pass


class EmptyOutline(PotsherdError, ValueError):
    pass


class BreakLabel(PotsherdError, ValueError):
    pass


class ShapeMismatch(PotsherdError, ValueError):
    pass


class StaleCache(PotsherdError, RuntimeError):
    pass


class IndexOutOfRange(PotsherdError, IndexError):
    pass


class UnknownLabel(PotsherdError, KeyError):
    pass


class ZeroProbability(RuntimeWarning):
    """A true-class probability fell below the floor and was clamped."""
