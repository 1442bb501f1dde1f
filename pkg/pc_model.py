"""Producer-consumer market model.

Producers set prices, consumers order their whole demand from the cheapest
producer, producers serve orders from stock plus the day's production, and
every day each producer picks another producer whose price it moves toward
by the share of the market it did not win.

`build_model` renders the market as `.rules` text and parses it, so the
generated program goes through the same validation as a hand-written one.
The plain-Python functions further down compute the same market directly
and serve as the reference the rule program is checked against.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from builtins_table import calculate_new_price as _new_price_builtin
from errors import ModelError
from models import ModelParams, Program, Relation, Theorem, Value, normalize_value, render_value, value_key
from rule_dsl import format_rule, parse_program
from specializer import write_theorem_rule

logger = logging.getLogger(__name__)

THEOREM_NAME = "decreasingInterval"
OBSERVABLE_NAME = "interval"

# rule id -> family label, in the order of the rule-count table
FAMILY_LABELS: Dict[str, str] = {
    "theoremCheck": "Checking theorem",
    "producerChoice": "Producers' choice of another producer",
    "totalOrders": "Calculating total orders",
    "totalSales": "Calculating total producers' sales",
    "demandOrder": "D. Consumers' demand and order",
    "price": "D. Producers' price",
    "productionLevel": "D. Producers' production and level",
    "sale": "D. Producers' sale",
}

DEFAULT_DIRECTIVES: Dict[str, Tuple[str, ...]] = {
    "theoremCheck": (),
    "producerChoice": ("time",),
    "totalOrders": ("time",),
    "totalSales": ("time",),
    "demandOrder": ("time",),
    "price": ("time",),
    "productionLevel": ("time", "producer"),
    "sale": ("time", "producer", "consumer"),
}

_RULES = {
    "producerChoice": """
rule producerChoice split({producerChoice}):
    price(P, X, D) and
    choose O from option(P, O, open, D)
  implies
    chosenOther(P, O, D).""",
    "totalOrders": """
rule totalOrders split({totalOrders}):
    producer(P) and
    T = sum Q over order(C, P, Q, D) by P, D
  implies
    totalOrder(P, T, D).""",
    "totalSales": """
rule totalSales split({totalSales}):
    producer(P) and
    S = sum X over sale(C, P, X, D) by P, D and
    TS = sum Y over sale(C2, P2, Y, D) by D
  implies
    sales(P, S, D) and
    totalSales(TS, D).""",
    "demandOrder": """
rule demandOrder split({demandOrder}):
    consumer(C) and
    Lo = min V over price(P, V, D) by D and
    Best = min Q over price(Q, Lo, D) by Lo, D
  implies
    demand(C, baseDemand, D) and
    order(C, Best, baseDemand, D).""",
    "price": """
rule price split({price}):
    price(P, MP, D) and
    totalSales(TS, D) and
    sales(P, MS, D) and
    chosenOther(P, O, D) and
    price(O, OP, D) and
    eval calculateNewPrice(MS, TS, OP, MP, gamma, nProducers) -> NP
  implies
    price(P, NP, D + 1).""",
    "productionLevel": """
rule productionLevel split({productionLevel}):
    level(P, L, D) and
    sales(P, S, D) and
    eval add(L, productionRate) -> A and
    eval sub(A, S) -> L2
  implies
    production(P, productionRate, D) and
    level(P, L2, D + 1).""",
    "sale": """
rule sale split({sale}):
    order(C, P, Q, D) and
    totalOrder(P, TO, D) and
    level(P, L, D) and
    eval served(Q, TO, L, productionRate) -> S
  implies
    sale(C, P, S, D).""",
}

_PREDICATES = """
pred price(producer, value, time).
pred demand(consumer, value, time).
pred order(consumer, producer, value, time).
pred totalOrder(producer, value, time).
pred sale(consumer, producer, value, time).
pred sales(producer, value, time).
pred totalSales(value, time).
pred level(producer, value, time).
pred production(producer, value, time).
pred option(producer, producer, offer, time).
pred chosenOther(producer, producer, time).
pred tendency(value).
"""


@dataclass(frozen=True)
class GeneratedModel:
    program: Program
    directives: Dict[str, Tuple[str, ...]]
    params: ModelParams
    text: str


def producer_names(count: int) -> List[str]:
    width = len(str(count))
    return [f"p{k:0{width}d}" for k in range(1, count + 1)]


def consumer_names(count: int) -> List[str]:
    width = len(str(count))
    return [f"c{k:0{width}d}" for k in range(1, count + 1)]


def options(params: ModelParams) -> Dict[int, Dict[str, List[str]]]:
    """Candidate others per day and producer; non-choice days use the cyclic next producer"""
    producers = producer_names(params.producers)
    choice_days = set(params.choice_days())
    result = {}
    for day in range(1, params.horizon):
        per_producer = {}
        for index, producer in enumerate(producers):
            if day in choice_days:
                per_producer[producer] = [p for p in producers if p != producer]
            else:
                per_producer[producer] = [producers[(index + 1) % len(producers)]]
        result[day] = per_producer
    return result


def theorem_decreasing_interval(first: int = 1, last: Optional[int] = None, horizon: int = 7) -> Theorem:
    return Theorem(THEOREM_NAME, OBSERVABLE_NAME, Relation.STRICTLY_DECREASING, first,
                   horizon if last is None else last)


def _render_model(params: ModelParams, directives: Mapping[str, Sequence[str]], theorem: Theorem) -> str:
    producers = producer_names(params.producers)
    consumers = consumer_names(params.consumers)
    lines = [
        "% producer-consumer market",
        f"horizon {params.horizon}.",
        "",
        f"sort producer = {{{', '.join(producers)}}}.",
        f"sort consumer = {{{', '.join(consumers)}}}.",
        "sort offer = {open, closed}.",
        "",
        f"param gamma = {render_value(normalize_value(params.gamma))}.",
        f"param baseDemand = {render_value(normalize_value(params.base_demand))}.",
        f"param productionRate = {render_value(normalize_value(params.production))}.",
        f"param nProducers = {params.producers}.",
        _PREDICATES,
    ]
    for producer, price in zip(producers, params.prices()):
        lines.append(f"fact price({producer}, {render_value(normalize_value(price))}, 1).")
    for producer in producers:
        lines.append(f"fact level({producer}, {render_value(normalize_value(params.initial_level))}, 1).")
    # every pair on every day, so each day's choice scans the same facts
    for day, per_producer in options(params).items():
        for producer, others in per_producer.items():
            for other in producers:
                if other != producer:
                    offer = "open" if other in others else "closed"
                    lines.append(f"fact option({producer}, {other}, {offer}, {day}).")
    lines.append("")
    lines.append(f"observable {OBSERVABLE_NAME} = spread(price, 2).")
    lines.append(f"theorem {theorem.name}: {theorem.observable} {theorem.relation.value} "
                 f"from {theorem.first} to {theorem.last}.")
    for rule_id, template in _RULES.items():
        lines.append(template.format(**{rule_id: ", ".join(directives[rule_id])}))
    return "\n".join(lines) + "\n"


def build_model(params: Optional[ModelParams] = None, theorem: Optional[Theorem] = None) -> GeneratedModel:
    """Generate the market program with its rule-splitting directives"""
    params = params or ModelParams()
    theorem = theorem or theorem_decreasing_interval(horizon=params.horizon)
    directives = dict(DEFAULT_DIRECTIVES)
    body = _render_model(params, directives, theorem)
    draft = parse_program(body, check=False)
    check = write_theorem_rule(theorem, draft.observable(theorem.observable), draft, "theoremCheck")
    text = body + "\n" + format_rule(check) + "\n"
    program = parse_program(text)
    logger.info(f"Generated market model: {params.producers} producers, {params.consumers} consumers, "
                f"horizon {params.horizon}", extra={'rules': len(program.rules)})
    return GeneratedModel(program, directives, params, text)


def agent_rulebases(program: Program) -> Dict[str, List[str]]:
    """Rules grouped by the agent sort owning their first consequent"""
    groups: Dict[str, List[str]] = {}
    for rule in program.rules:
        owner = "global"
        for atom in rule.head:
            decl = program.declaration(atom.predicate)
            if decl is not None and decl.sorts and decl.sorts[0] in program.sorts:
                owner = decl.sorts[0]
                break
        groups.setdefault(owner, []).append(rule.id)
    return dict(sorted(groups.items()))


# Market formulas


def calculate_new_price(my_price: Value, my_sales: Value, total_sales: Value, other_price: Value,
                        gamma: Value, producers: int) -> Fraction:
    """my + (1 - share) * gamma * (other - my), share = mySales / totalSales

    An empty market gives every producer the share 1/producers.
    """
    if producers < 1:
        raise ModelError(f"a market needs at least one producer, got {producers}")
    return Fraction(_new_price_builtin(my_sales, total_sales, other_price, my_price, gamma, producers))


def demand_order_allocation(prices: Mapping[str, Value], consumers: Sequence[str],
                            base_demand: Value) -> Tuple[Dict[Tuple[str, str], Fraction], Dict[str, Fraction]]:
    """Each consumer orders its whole demand from the cheapest producer"""
    best = min(prices, key=lambda p: (value_key(prices[p]), p))
    orders = {(consumer, best): Fraction(base_demand) for consumer in consumers}
    total = {producer: Fraction(0) for producer in prices}
    total[best] = Fraction(base_demand) * len(consumers)
    return orders, total


@dataclass(frozen=True)
class DayOutcome:
    sales: Dict[str, Fraction]
    total_sales: Fraction
    production: Dict[str, Fraction]
    next_levels: Dict[str, Fraction]


def sales_level_production(total_orders: Mapping[str, Value], levels: Mapping[str, Value],
                           production: Value) -> DayOutcome:
    sales = {}
    next_levels = {}
    for producer, ordered in total_orders.items():
        available = Fraction(levels[producer]) + Fraction(production)
        sold = min(Fraction(ordered), available)
        sales[producer] = sold
        next_levels[producer] = available - sold
    return DayOutcome(sales, sum(sales.values(), Fraction(0)),
                      {p: Fraction(production) for p in total_orders}, next_levels)


def simulate_market(params: ModelParams, choices: Sequence[Mapping[str, str]]) -> List[Dict[str, Fraction]]:
    """Prices for STIs 1..horizon given each day's chosen other producer"""
    producers = producer_names(params.producers)
    consumers = consumer_names(params.consumers)
    prices = dict(zip(producers, params.prices()))
    levels = {p: Fraction(params.initial_level) for p in producers}
    history = [dict(prices)]
    for day in range(1, params.horizon):
        _, total_orders = demand_order_allocation(prices, consumers, params.base_demand)
        outcome = sales_level_production(total_orders, levels, params.production)
        chosen = choices[day - 1]
        prices = {
            p: calculate_new_price(prices[p], outcome.sales[p], outcome.total_sales, prices[chosen[p]],
                                   params.gamma, params.producers)
            for p in producers
        }
        levels = outcome.next_levels
        history.append(dict(prices))
    return history


def price_interval(prices, sti: Optional[int] = None) -> Fraction:
    """Largest minus smallest price, from a price mapping or a database at `sti`"""
    if not isinstance(prices, Mapping):
        values = [f.args[1] for f in prices.at("price", sti)]
    else:
        values = list(prices.values())
    if not values:
        raise ModelError(f"no price facts at STI {sti}")
    return Fraction(max(values)) - Fraction(min(values))


def check_market_invariants(database, params: ModelParams) -> List[str]:
    """Violated market invariants of a saturated generic database, as messages"""
    problems = []
    initial = params.prices()
    low, high = min(initial), max(initial)
    producers = producer_names(params.producers)

    def values(family: str, sti: int) -> Dict[tuple, Value]:
        return {f.args[:-2]: f.args[-2] for f in database.at(family, sti)}

    for sti in range(1, params.horizon + 1):
        for producer, price in values("price", sti).items():
            if not low <= price <= high:
                problems.append(f"price of {producer[0]} at STI {sti} leaves [{low}, {high}]")
    for sti in range(1, params.horizon):
        sales = values("sales", sti)
        orders = values("order", sti)
        total_orders = values("totalOrder", sti)
        levels = values("level", sti)
        next_levels = values("level", sti + 1)
        production = values("production", sti)
        total_sales = values("totalSales", sti)
        if total_sales.get((), None) != sum(sales.values(), 0):
            problems.append(f"totalSales at STI {sti} is not the sum of sales")
        for producer in producers:
            key = (producer,)
            ordered = sum((q for (c, p), q in orders.items() if p == producer), 0)
            if total_orders.get(key) != ordered:
                problems.append(f"totalOrder of {producer} at STI {sti} is not the sum of its orders")
            if levels.get(key, 0) < 0:
                problems.append(f"level of {producer} at STI {sti} is negative")
            if sales.get(key, 0) > levels.get(key, 0) + production.get(key, 0):
                problems.append(f"{producer} sells more than it holds at STI {sti}")
            if key in next_levels and \
                    next_levels[key] - levels[key] != production.get(key, 0) - sales.get(key, 0):
                problems.append(f"stock of {producer} is not conserved from STI {sti} to {sti + 1}")
    return problems
