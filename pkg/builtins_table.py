"""Registered builtin functions callable from rule bodies through `eval`.

Every builtin works on exact values: integers, Fractions and symbols.
Comparisons return the symbols `true` / `false` so a rule can test them
with a constant output (`eval lt(A, B) -> true`).
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Optional

from models import Value, normalize_value, value_key


@dataclass(frozen=True)
class Builtin:
    name: str
    arity: int
    function: Callable[..., Value]

    def __call__(self, *args: Value) -> Value:
        return normalize_value(self.function(*args))


def _number(value: Value) -> Fraction:
    if isinstance(value, str):
        raise TypeError(f"{value!r} is not a number")
    return Fraction(value)


def _div(a: Value, b: Value) -> Fraction:
    return _number(a) / _number(b)


def _compare(test: Callable[[tuple, tuple], bool]) -> Callable[[Value, Value], str]:
    def run(a: Value, b: Value) -> str:
        return "true" if test(value_key(a), value_key(b)) else "false"
    return run


def calculate_new_price(my_sales: Value, total_sales: Value, other_price: Value,
                        my_price: Value, gamma: Value, producers: Value) -> Fraction:
    """Move my price toward the chosen producer's price by the unsold share.

    share = mySales / totalSales, or 1/P when nothing was sold at all.
    """
    my_price = _number(my_price)
    total = _number(total_sales)
    if total == 0:
        share = 1 / _number(producers)
    else:
        share = _number(my_sales) / total
    return my_price + (1 - share) * _number(gamma) * (_number(other_price) - my_price)


def served(quantity: Value, total_order: Value, level: Value, production: Value) -> Fraction:
    """A consumer's part of a producer's sales when stock rations the orders"""
    total = _number(total_order)
    if total == 0:
        return Fraction(0)
    available = _number(level) + _number(production)
    return _number(quantity) * min(Fraction(1), available / total)


BUILTINS: Dict[str, Builtin] = {
    b.name: b
    for b in (
        Builtin("add", 2, lambda a, b: _number(a) + _number(b)),
        Builtin("sub", 2, lambda a, b: _number(a) - _number(b)),
        Builtin("mul", 2, lambda a, b: _number(a) * _number(b)),
        Builtin("div", 2, _div),
        Builtin("min", 2, lambda a, b: min(a, b, key=value_key)),
        Builtin("max", 2, lambda a, b: max(a, b, key=value_key)),
        Builtin("lt", 2, _compare(lambda a, b: a < b)),
        Builtin("le", 2, _compare(lambda a, b: a <= b)),
        Builtin("gt", 2, _compare(lambda a, b: a > b)),
        Builtin("ge", 2, _compare(lambda a, b: a >= b)),
        Builtin("eq", 2, _compare(lambda a, b: a == b)),
        Builtin("ne", 2, _compare(lambda a, b: a != b)),
        Builtin("calculateNewPrice", 6, calculate_new_price),
        Builtin("served", 4, served),
    )
}


def lookup(name: str) -> Optional[Builtin]:
    return BUILTINS.get(name)
