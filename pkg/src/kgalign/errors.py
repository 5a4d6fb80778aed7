"""Exception hierarchy shared across the package."""


class KGAlignError(Exception):
    """Base class for every error raised by kgalign."""


class EmptyName(KGAlignError, ValueError):
    pass


class ParseError(KGAlignError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DanglingReference(KGAlignError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "dangling reference"


class MissingEntity(KGAlignError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing entity"


class DimensionMismatch(KGAlignError, ValueError):
    pass


class ZeroVector(KGAlignError, ValueError):
    pass


class DegenerateNorm(KGAlignError, ArithmeticError):
    pass


class NormViolation(KGAlignError, ValueError):
    pass


class ShapeMismatch(KGAlignError, ValueError):
    pass


class QueueNotWarm(KGAlignError, RuntimeError):
    pass


class EmptyNegatives(QueueNotWarm):
    """Raised when anchor exclusion leaves an anchor with no negatives."""


class CapacityViolation(KGAlignError, ValueError):
    pass


class MissingQuery(KGAlignError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing query"


class CheckpointError(KGAlignError, ValueError):
    pass


class ConfigError(KGAlignError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
