"""Exception hierarchy shared by all flatcheck modules."""


class FlatcheckError(Exception):
    """Base class for every error raised by flatcheck."""


class CyclicBindings(FlatcheckError):
    pass


class UnboundVariable(FlatcheckError):
    def __init__(self, name):
        super().__init__(f"unbound variable {name}")
        self.name = name


class DomainError(FlatcheckError):
    pass


class NoValidSample(FlatcheckError):
    pass


class UnknownVariable(FlatcheckError):
    pass


class ChartIncomplete(FlatcheckError):
    pass


class SamplingExhausted(FlatcheckError):
    pass


class TruncationTooSmall(FlatcheckError):
    def __init__(self, needed, K):
        super().__init__(f"expression needs jet order {needed} but truncation is K={K}")
        self.needed = needed
        self.K = K


class NonPolynomialTarget(FlatcheckError):
    pass


class ScopeExceeded(FlatcheckError):
    pass


class NotRuled(FlatcheckError):
    pass


class AmbiguousRay(FlatcheckError):
    pass


class UnsupportedClass(FlatcheckError):
    def __init__(self, message, coefficient=None):
        super().__init__(message)
        self.coefficient = coefficient


class PivotVanishes(FlatcheckError):
    pass


class ReexpressionFailed(FlatcheckError):
    pass


class ChartViolated(FlatcheckError):
    pass


class NotApplicable(FlatcheckError):
    pass


class ParseError(FlatcheckError):
    def __init__(self, message, line=None, col=None):
        where = f" at line {line}, column {col}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.message = message
        self.line = line
        self.col = col


class UnknownIdentifier(ParseError):
    def __init__(self, name, line=None, col=None):
        super().__init__(f"unknown identifier {name}", line, col)
        self.name = name


class DuplicateDeclaration(ParseError):
    def __init__(self, name, line=None, col=None):
        super().__init__(f"duplicate declaration of {name}", line, col)
        self.name = name
