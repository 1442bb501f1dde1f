from typing import Optional, Sequence


def _restore(cls, args, state):
    error = cls.__new__(cls)
    Exception.__init__(error, *args)
    error.__dict__.update(state)
    return error


class RuleEngineError(Exception):
    """Base class for every error raised by the rule engine and its tools"""

    def __reduce__(self):
        # subclasses take structured arguments, so pickle from state
        return (_restore, (type(self), self.args, dict(self.__dict__)))


class DSLSyntaxError(RuleEngineError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class ValidationError(RuleEngineError):
    """Raised by parse_program when the parsed program violates an invariant"""

    def __init__(self, violations: Sequence):
        self.violations = list(violations)
        first = self.violations[0] if self.violations else None
        summary = str(first) if first is not None else "invalid program"
        if len(self.violations) > 1:
            summary += f" (and {len(self.violations) - 1} more)"
        super().__init__(summary)


class StratificationError(RuleEngineError):
    def __init__(self, message: str, cycle: Sequence[str]):
        super().__init__(f"{message}: {' -> '.join(cycle)}")
        self.cycle = list(cycle)


class BuiltinError(RuleEngineError):
    def __init__(self, builtin: str, rule: str, sti: int, cause: Exception):
        super().__init__(f"builtin {builtin} failed in rule {rule} at STI {sti}: {cause}")
        self.builtin = builtin
        self.rule = rule
        self.sti = sti


class HorizonExceededError(RuleEngineError):
    def __init__(self, fact: str, horizon: int):
        super().__init__(f"fact {fact} lies beyond the horizon {horizon}")
        self.fact = fact
        self.horizon = horizon


class SpecializationError(RuleEngineError):
    pass


class FoldError(RuleEngineError):
    pass


class ObservableError(RuleEngineError):
    def __init__(self, observable: str, sti: int, message: Optional[str] = None):
        super().__init__(message or f"observable {observable} is undefined at STI {sti}")
        self.observable = observable
        self.sti = sti


class LabelError(RuleEngineError):
    def __init__(self, message: str, position: int):
        super().__init__(f"selection {position}: {message}")
        self.position = position


class EnvelopeShapeError(RuleEngineError):
    pass


class ModelError(RuleEngineError):
    """The model disagrees with itself, e.g. the in-model theorem witness"""


class ConfigError(RuleEngineError):
    pass


class ExplorationAborted(RuleEngineError):
    """An engine error stopped an exploration; the partial report is attached"""

    def __init__(self, report, cause: Exception):
        super().__init__(f"exploration aborted: {cause}")
        self.report = report
        self.cause = cause
