from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import total_ordering
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

from collections_extended import setlist
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

# Terms

Value = Union[str, int, Fraction]

TIME_SORT = "time"
VALUE_SORT = "value"
FALSE_PREDICATE = "FALSE"
WITNESS_PREDICATE = "tendency"
ANONYMOUS = "_"


def normalize_value(value: Value) -> Value:
    """Keep rationals in lowest terms and collapse integral ones to int"""
    if isinstance(value, Fraction) and value.denominator == 1:
        return int(value.numerator)
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


def render_value(value: Optional[Value]) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return str(value)


def value_key(value: Value) -> Tuple[int, Any]:
    """Total order over mixed values: numbers first, then symbols"""
    if isinstance(value, str):
        return (1, value)
    return (0, value)


def coerce_rational(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"not a rational: {value!r}") from e
    raise ValueError(f"exact rational expected, got {type(value).__name__}")


@dataclass(frozen=True)
class Variable:
    name: str

    @property
    def anonymous(self) -> bool:
        return self.name == ANONYMOUS


@dataclass(frozen=True)
class Constant:
    value: Value


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class SourcePosition:
    line: int
    column: int

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}"


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: Tuple[Term, ...]
    # +1 on the time argument, consequents only
    offset: int = 0

    def variables(self) -> List[str]:
        return [a.name for a in self.args if isinstance(a, Variable) and not a.anonymous]

    @property
    def ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)


class LiteralKind(str, Enum):
    POSITIVE = "positive"
    NEGATED = "negated"
    CHOICE = "choice"
    BUILTIN = "builtin"
    AGGREGATE = "aggregate"


class AggregateOp(str, Enum):
    SUM = "sum"
    MIN = "min"
    MAX = "max"
    COUNT = "count"


@dataclass(frozen=True)
class Candidates:
    """Candidate-set expression of a choice literal; exactly one form is set"""

    sort: Optional[str] = None
    excluded: Tuple[Term, ...] = ()
    members: Tuple[Term, ...] = ()
    source: Optional[Atom] = None

    @property
    def form(self) -> str:
        if self.sort is not None:
            return "sort"
        if self.source is not None:
            return "pattern"
        return "set"


@dataclass(frozen=True)
class Literal:
    kind: LiteralKind
    atom: Optional[Atom] = None
    variable: Optional[str] = None
    candidates: Optional[Candidates] = None
    function: Optional[str] = None
    inputs: Tuple[Term, ...] = ()
    output: Optional[Term] = None
    operator: Optional[AggregateOp] = None
    target: Optional[str] = None
    group: Tuple[str, ...] = ()
    position: Optional[SourcePosition] = field(default=None, compare=False)

    def pattern(self) -> Optional[Atom]:
        """The fact pattern this literal reads, if any"""
        if self.kind is LiteralKind.CHOICE:
            return self.candidates.source if self.candidates else None
        return self.atom


@dataclass(frozen=True)
class Rule:
    id: str
    body: Tuple[Literal, ...]
    head: Tuple[Atom, ...]
    split: Optional[Tuple[str, ...]] = None
    position: Optional[SourcePosition] = field(default=None, compare=False)

    @property
    def falsum(self) -> bool:
        return len(self.head) == 1 and self.head[0].predicate == FALSE_PREDICATE


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    sorts: Tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.sorts)

    @property
    def time_indexed(self) -> bool:
        return bool(self.sorts) and self.sorts[-1] == TIME_SORT


class Relation(str, Enum):
    STRICTLY_DECREASING = "strictly_decreasing"
    NON_INCREASING = "non_increasing"
    STRICTLY_INCREASING = "strictly_increasing"
    NON_DECREASING = "non_decreasing"
    CONSTANT = "constant"

    def holds(self, before: Value, after: Value) -> bool:
        if self is Relation.STRICTLY_DECREASING:
            return after < before
        if self is Relation.NON_INCREASING:
            return after <= before
        if self is Relation.STRICTLY_INCREASING:
            return after > before
        if self is Relation.NON_DECREASING:
            return after >= before
        return after == before

    @property
    def builtin(self) -> str:
        """Builtin comparing (later, earlier) values the same way"""
        return {
            Relation.STRICTLY_DECREASING: "lt",
            Relation.NON_INCREASING: "le",
            Relation.STRICTLY_INCREASING: "gt",
            Relation.NON_DECREASING: "ge",
            Relation.CONSTANT: "eq",
        }[self]


class ObservableOp(str, Enum):
    SUM = "sum"
    MIN = "min"
    MAX = "max"
    COUNT = "count"
    SPREAD = "spread"


@dataclass(frozen=True)
class Observable:
    name: str
    operator: ObservableOp
    predicate: str
    # 1-based argument position of the measured value
    argument: int


@dataclass(frozen=True)
class Theorem:
    name: str
    observable: str
    relation: Relation
    first: int
    last: int


@dataclass(frozen=True)
class Program:
    horizon: int
    sorts: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    params: Dict[str, Value] = field(default_factory=dict)
    predicates: Dict[str, PredicateDecl] = field(default_factory=dict)
    facts: Tuple[Atom, ...] = ()
    rules: Tuple[Rule, ...] = ()
    observables: Tuple[Observable, ...] = ()
    theorems: Tuple[Theorem, ...] = ()
    # folded predicate -> (family, STI), filled by specialization
    folds: Dict[str, Tuple[str, int]] = field(default_factory=dict)

    def rule(self, rule_id: str) -> Rule:
        for rule in self.rules:
            if rule.id == rule_id:
                return rule
        raise KeyError(rule_id)

    def observable(self, name: str) -> Observable:
        for observable in self.observables:
            if observable.name == name:
                return observable
        raise KeyError(name)

    def theorem(self, name: str) -> Theorem:
        for theorem in self.theorems:
            if theorem.name == name:
                return theorem
        raise KeyError(name)

    def declaration(self, name: str) -> Optional[PredicateDecl]:
        """Declared predicate, including the implicit unary predicate of each sort"""
        if name in self.predicates:
            return self.predicates[name]
        if name in self.sorts:
            return PredicateDecl(name, (name,))
        return None

    def folded(self, name: str) -> Optional[Tuple[str, int]]:
        """(family, STI) for a folded predicate such as price-3"""
        return self.folds.get(name)

    def folded_families(self) -> Dict[str, Dict[int, str]]:
        families: Dict[str, Dict[int, str]] = {}
        for name in self.predicates:
            info = self.folded(name)
            if info is not None:
                families.setdefault(info[0], {})[info[1]] = name
        return families


@dataclass(frozen=True)
class Provenance:
    """Where a split rule came from: generic rule, STI and substituted variables"""

    rule: str
    sti: int
    binding: Tuple[Tuple[str, Value], ...] = ()


# Runtime records


@dataclass(frozen=True)
class Fact:
    predicate: str
    args: Tuple[Value, ...]
    sti: int = field(default=0, compare=False)
    rule: Optional[str] = field(default=None, compare=False)

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(render_value(a) for a in self.args)})"


class ChoicePointId(NamedTuple):
    rule: str
    sti: int
    binding: Tuple[Tuple[str, Value], ...]

    def sort_key(self) -> tuple:
        return (self.rule, self.sti, tuple((name, value_key(v)) for name, v in self.binding))

    def __str__(self) -> str:
        inner = ", ".join(f"{name}={render_value(v)}" for name, v in self.binding)
        return f"{self.rule}@{self.sti}{{{inner}}}"


@dataclass(frozen=True)
class ChoicePoint:
    id: ChoicePointId
    candidates: setlist

    def __str__(self) -> str:
        return f"{self.id} [{', '.join(render_value(c) for c in self.candidates)}]"


@dataclass(frozen=True)
class ChoiceSelection:
    choice_point: ChoicePointId
    index: int
    value: Value


@total_ordering
@dataclass(frozen=True)
class AssumptionLabel:
    selections: Tuple[ChoiceSelection, ...] = ()

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(s.index for s in self.selections)

    def assignment(self) -> Dict[ChoicePointId, Value]:
        return {s.choice_point: s.value for s in self.selections}

    def __len__(self) -> int:
        return len(self.selections)

    def __lt__(self, other: "AssumptionLabel") -> bool:
        return self.indices < other.indices

    def __str__(self) -> str:
        return render_label(self.indices)


def render_label(indices: Tuple[int, ...]) -> str:
    return ".".join(str(i) for i in indices) if indices else "-"


def parse_label(text: str) -> Tuple[int, ...]:
    text = text.strip()
    if text in ("", "-"):
        return ()
    try:
        indices = tuple(int(part) for part in text.split("."))
    except ValueError as e:
        raise ValueError(f"malformed label {text!r}") from e
    if any(i < 0 for i in indices):
        raise ValueError(f"malformed label {text!r}")
    return indices


class Status(str, Enum):
    COMPLETED = "completed"
    PRUNED = "pruned"


@dataclass(frozen=True)
class PruneInfo:
    rule: str
    sti: int
    binding: Tuple[Tuple[str, Value], ...]

    def __str__(self) -> str:
        inner = ", ".join(f"{name}={render_value(v)}" for name, v in self.binding)
        return f"STI {self.sti} {self.rule} FALSE {{{inner}}}"


@dataclass
class TrajectoryRecord:
    label: AssumptionLabel
    status: Status
    # observable name -> values for STIs 1..horizon (None where undefined)
    observables: Dict[str, Tuple[Optional[Value], ...]]
    witnesses: frozenset = frozenset()
    pruned_by: Optional[PruneInfo] = None
    # live leaf database until the stream advances, or a snapshot
    database: Any = None
    theorem_satisfied: Optional[bool] = None


# Configuration models


class Mode(str, Enum):
    PROVE = "prove"
    REFUTE = "refute"
    SURVEY = "survey"


class Verdict(str, Enum):
    NECESSARY = "NECESSARY"
    COUNTEREXAMPLE = "COUNTEREXAMPLE"
    SURVEYED = "SURVEYED"


class ModelParams(BaseModel):
    """Producer-consumer market parameters"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    producers: int = Field(default=3, ge=2)
    consumers: int = Field(default=3, ge=1)
    horizon: int = Field(default=7, ge=2)
    gamma: Fraction = Fraction(2, 3)
    initial_prices: Optional[List[Fraction]] = None
    base_demand: Fraction = Fraction(1)
    production: Fraction = Fraction(2)
    initial_level: Fraction = Fraction(2)
    choice_transitions: Optional[List[int]] = None

    @field_validator('gamma', 'base_demand', 'production', 'initial_level', mode='before')
    @classmethod
    def validate_rational(cls, v):
        """Accept "p/q" strings and integers, never floats"""
        return coerce_rational(v)

    @field_validator('initial_prices', mode='before')
    @classmethod
    def validate_prices(cls, v):
        if v is None:
            return None
        if isinstance(v, str):
            v = [part for part in v.split(",") if part.strip()]
        return [coerce_rational(p) for p in v]

    @field_validator('choice_transitions', mode='before')
    @classmethod
    def validate_transitions(cls, v):
        if isinstance(v, str):
            return [int(part) for part in v.split(",") if part.strip()]
        return v

    @model_validator(mode='after')
    def check_invariants(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie strictly between 0 and 1")
        if self.base_demand < 0 or self.production < 0 or self.initial_level < 0:
            raise ValueError("demand, production and level must be non-negative")
        prices = self.prices()
        if len(prices) != self.producers:
            raise ValueError(f"expected {self.producers} initial prices, got {len(prices)}")
        if len(set(prices)) != len(prices):
            raise ValueError("initial prices must be pairwise distinct")
        if any(p <= 0 for p in prices):
            raise ValueError("initial prices must be positive")
        for day in self.choice_days():
            if not 1 <= day <= self.horizon - 1:
                raise ValueError(f"choice transition {day} outside 1..{self.horizon - 1}")
        return self

    def prices(self) -> List[Fraction]:
        if self.initial_prices is not None:
            return list(self.initial_prices)
        # 10, 14, 22, 34, ...
        return [Fraction(10 + 2 * k * (k + 1)) for k in range(self.producers)]

    def choice_days(self) -> List[int]:
        if self.choice_transitions is not None:
            return sorted(set(self.choice_transitions))
        return list(range(1, self.horizon - 1))

    @field_serializer('gamma', 'base_demand', 'production', 'initial_level')
    def serialize_rational(self, value, _info):
        return render_value(normalize_value(value))

    @field_serializer('initial_prices')
    def serialize_prices(self, prices, _info):
        if prices is None:
            return None
        return [render_value(normalize_value(p)) for p in prices]


class RunConfig(BaseModel):
    model: Optional[str] = None
    generator: Optional[ModelParams] = None
    directives: Optional[str] = None
    mode: Mode = Mode.PROVE
    theorem: Optional[str] = None
    format: str = Field(default="json", pattern="^(json|csv|both)$")
    output: str = "reports"
    instrument: bool = False
    parallelism: int = Field(default=1, ge=1)
    keep_mapping: bool = False
    generic: bool = False
    timing: bool = False

    @model_validator(mode='after')
    def check_mode(self):
        if self.mode is Mode.SURVEY and self.theorem is not None:
            raise ValueError("survey mode takes no theorem")
        if self.model is not None and self.generator is not None:
            raise ValueError("give either a model file or generator parameters, not both")
        return self


# Report documents


class BoundRow(BaseModel):
    sti: int
    min: Optional[str] = None
    max: Optional[str] = None
    argmin: Optional[str] = None
    argmax: Optional[str] = None


class CounterexampleDocument(BaseModel):
    label: str
    observables: Dict[str, List[Optional[str]]]


class RatioDocument(BaseModel):
    min: Optional[str] = None
    max: Optional[str] = None


class ReportDocument(BaseModel):
    schema_version: int = Field(default=1, serialization_alias="schema")
    verdict: Verdict
    theorem: Optional[str] = None
    mode: Mode
    completed: int
    pruned: int
    valid: bool = True
    counterexample: Optional[CounterexampleDocument] = None
    envelope: Dict[str, List[BoundRow]]
    ratios: Dict[str, RatioDocument] = Field(default_factory=dict)
    mapping: Optional[Dict[str, Dict[str, List[Optional[str]]]]] = None
    diagnostics: Optional[Dict[str, Any]] = None


class CompileSummaryDocument(BaseModel):
    schema_version: int = Field(default=1, serialization_alias="schema")
    ruleCounts: Dict[str, Dict[str, int]]
    directives: Dict[str, List[str]]
    predictedFactors: Dict[str, int]
    total: Dict[str, int]
