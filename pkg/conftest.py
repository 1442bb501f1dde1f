import pytest

from models import ModelParams
from pc_model import build_model
from rule_dsl import parse_program
from specializer import specialize

SWAP_TEXT = """
horizon 3.
sort agent = {a, b}.
pred score(agent, value, time).
pred pick(agent, agent, time).
fact score(a, 1, 1).
fact score(b, 2, 1).
observable total = sum(score, 2).
observable spreadScore = spread(score, 2).
rule choose split(time):
    score(P, X, D) and choose O in agent
  implies pick(P, O, D).
rule move split(time):
    pick(P, O, D) and score(O, Y, D)
  implies score(P, Y, D + 1).
"""

CLASH_RULE = """
rule clash split(time):
    pick(a, b, D)
  implies FALSE.
"""


@pytest.fixture
def swap_text():
    """Two agents copying the score of an agent they choose each day"""
    return SWAP_TEXT


@pytest.fixture
def swap_program():
    return parse_program(SWAP_TEXT)


@pytest.fixture
def swap_split(swap_program):
    """Swap program split by time only"""
    return specialize(swap_program)


@pytest.fixture
def clash_program():
    """Swap program where agent a must never pick b"""
    return parse_program(SWAP_TEXT + CLASH_RULE)


@pytest.fixture
def small_params():
    """Three producers, four STIs: 64 trajectories"""
    return ModelParams(producers=3, consumers=2, horizon=4)


@pytest.fixture
def small_model(small_params):
    return build_model(small_params)


@pytest.fixture
def small_split(small_model):
    return specialize(small_model.program, small_model.directives)


@pytest.fixture(scope="session")
def default_model():
    """The default market: 3 producers, 3 consumers, 7 STIs"""
    return build_model()


@pytest.fixture(scope="session")
def default_split(default_model):
    return specialize(default_model.program, default_model.directives)
