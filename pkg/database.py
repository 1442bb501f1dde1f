# database.py

import logging
from bisect import bisect_left
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

from errors import HorizonExceededError, RuleEngineError
from models import Fact, Observable, ObservableOp, Program, Value, normalize_value, value_key

logger = logging.getLogger(__name__)


def _args_key(args: Tuple[Value, ...]) -> tuple:
    return tuple(value_key(a) for a in args)


class Database:
    """Branch-local fact store.

    Facts live in one bucket per predicate, kept in lexicographic argument
    order, plus an index by (predicate family, STI). Every insertion is
    recorded on a trail so a branch can be rolled back with `undo(mark)`.
    """

    def __init__(self, horizon: int, timed: Iterable[str] = (),
                 folded: Optional[Mapping[str, Tuple[str, int]]] = None):
        self.horizon = horizon
        self._timed = frozenset(timed)
        self._folded = dict(folded or {})
        self._buckets: Dict[str, List[Fact]] = {}
        self._keys: Dict[str, List[tuple]] = {}
        self._members: Dict[str, Set[Tuple[Value, ...]]] = {}
        self._by_sti: Dict[Tuple[str, int], List[Fact]] = {}
        self._trail: List[Fact] = []

    @classmethod
    def for_program(cls, program: Program) -> "Database":
        timed = [name for name, decl in program.predicates.items() if decl.time_indexed]
        folded = {}
        for name in program.predicates:
            info = program.folded(name)
            if info is not None:
                folded[name] = info
        return cls(program.horizon, timed, folded)

    def locate(self, predicate: str, args: Tuple[Value, ...]) -> Tuple[str, int]:
        """(family, STI) a fact is indexed under"""
        if predicate in self._timed:
            sti = args[-1]
            if isinstance(sti, bool) or not isinstance(sti, int) or sti < 0:
                raise RuleEngineError(f"fact {predicate}{args} has a non-integer STI")
            return predicate, sti
        if predicate in self._folded:
            return self._folded[predicate]
        return predicate, 0

    def add(self, predicate: str, args: Tuple[Value, ...], rule: Optional[str] = None) -> bool:
        members = self._members.get(predicate)
        if members is None:
            members = self._members[predicate] = set()
            self._buckets[predicate] = []
            self._keys[predicate] = []
        elif args in members:
            return False
        family, sti = self.locate(predicate, args)
        fact = Fact(predicate, args, sti, rule)
        if sti > self.horizon:
            raise HorizonExceededError(str(fact), self.horizon)
        key = _args_key(args)
        keys = self._keys[predicate]
        index = bisect_left(keys, key)
        keys.insert(index, key)
        self._buckets[predicate].insert(index, fact)
        members.add(args)
        self._by_sti.setdefault((family, sti), []).append(fact)
        self._trail.append(fact)
        return True

    def contains(self, predicate: str, args: Tuple[Value, ...]) -> bool:
        members = self._members.get(predicate)
        return members is not None and args in members

    def bucket(self, predicate: str) -> List[Fact]:
        """Every fact of a predicate in match order; callers must not mutate it"""
        return self._buckets.get(predicate, [])

    def at(self, family: str, sti: int) -> List[Fact]:
        return self._by_sti.get((family, sti), [])

    def mark(self) -> int:
        return len(self._trail)

    def undo(self, mark: int):
        trail = self._trail
        while len(trail) > mark:
            fact = trail.pop()
            predicate = fact.predicate
            keys = self._keys[predicate]
            index = bisect_left(keys, _args_key(fact.args))
            del keys[index]
            del self._buckets[predicate][index]
            self._members[predicate].discard(fact.args)
            family, sti = self.locate(predicate, fact.args)
            self._by_sti[(family, sti)].pop()

    def facts(self) -> Iterator[Fact]:
        for predicate in sorted(self._buckets):
            yield from self._buckets[predicate]

    def __len__(self) -> int:
        return sum(len(bucket) for bucket in self._buckets.values())

    def __iter__(self) -> Iterator[Fact]:
        return self.facts()

    def fact_set(self) -> Set[Tuple[str, Tuple[Value, ...]]]:
        return {(f.predicate, f.args) for f in self.facts()}

    def unfolded_fact_set(self) -> Set[Tuple[str, Tuple[Value, ...]]]:
        """Fact set with folded predicates translated back to their family"""
        result = set()
        for fact in self.facts():
            info = self._folded.get(fact.predicate)
            if info is None:
                result.add((fact.predicate, fact.args))
            else:
                result.add((info[0], fact.args + (info[1],)))
        return result

    def snapshot(self) -> "Database":
        copy = Database(self.horizon, self._timed, self._folded)
        for fact in self.facts():
            copy.add(fact.predicate, fact.args, fact.rule)
        copy._trail = []
        return copy

    def observe(self, observable: Observable, sti: int) -> Optional[Value]:
        """Value of an observable at one STI, None where it is undefined"""
        facts = self.at(observable.predicate, sti)
        op = observable.operator
        if op is ObservableOp.COUNT:
            return len(facts)
        values = [f.args[observable.argument - 1] for f in facts]
        if op is ObservableOp.SUM:
            return normalize_value(sum(values, 0)) if values else 0
        if not values:
            return None
        low = min(values, key=value_key)
        high = max(values, key=value_key)
        if op is ObservableOp.MIN:
            return low
        if op is ObservableOp.MAX:
            return high
        return normalize_value(high - low)


def init_database(program: Program, extra: Iterable[Fact] = ()) -> Database:
    """Create a database holding the sort instances and the initial facts"""
    db = Database.for_program(program)
    for sort, instances in program.sorts.items():
        for instance in instances:
            db.add(sort, (instance,))
    for atom in program.facts:
        db.add(atom.predicate, tuple(program.params.get(a.value, a.value) if isinstance(a.value, str) else a.value
                                     for a in atom.args))
    for fact in extra:
        db.add(fact.predicate, fact.args, fact.rule)
    logger.debug("Database initialised", extra={'facts': len(db), 'horizon': program.horizon})
    return db
