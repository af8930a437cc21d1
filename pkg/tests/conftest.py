import numpy as np
import pytest

from app.checker import BoundedUntilQuery
from app.core.config import get_settings
from app.formula import eq, cmp
from app.gridworld import GridConfig
from app.mdp import VariableSchema, build


@pytest.fixture
def settings():
    return get_settings(testing=True)


# -----------------------------
# The three-state example
#   s0: alive, not goal   a: s1 0.5 / s2 0.5   b: s1 0.3 / s0 0.7
#   s1: goal (absorbing)
#   s2: dead (absorbing)
# -----------------------------
@pytest.fixture
def three_state_mdp():
    schema = VariableSchema([("goal", 0, 1), ("alive", 0, 1)])
    states = [
        {"goal": 0, "alive": 1},
        {"goal": 1, "alive": 1},
        {"goal": 0, "alive": 0},
    ]
    actions = [
        [("a", [(1, 0.5), (2, 0.5)]), ("b", [(1, 0.3), (0, 0.7)])],
        [("loop", [(1, 1.0)])],
        [("loop", [(2, 1.0)])],
    ]
    return build(schema, states, actions, initial=[0])


@pytest.fixture
def three_state_query():
    return BoundedUntilQuery(eq("alive", 1), eq("goal", 1), 2)


def make_random_mdp(seed, max_states=15, max_actions=3, max_targets=2, max_horizon=4):
    """
    Random MDP with a 'flag' variable: 2 = goal (psi), 1 = safe (phi), 0 = blocked.

    Returns:
        (mdp, query)
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_states + 1))
    schema = VariableSchema([("id", 0, n - 1), ("flag", 0, 2)])
    flags = rng.choice(3, size=n, p=[0.2, 0.6, 0.2])
    states = [{"id": i, "flag": int(flags[i])} for i in range(n)]
    actions = []
    for _ in range(n):
        state_actions = []
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(max_targets, n) + 1))
            targets = rng.choice(n, size=k, replace=False)
            weights = rng.dirichlet(np.ones(k))
            state_actions.append((f"a{a}", list(zip(targets.tolist(), weights.tolist()))))
        actions.append(state_actions)
    mdp = build(schema, states, actions, initial=[0])
    query = BoundedUntilQuery(cmp("flag", ">=", 1), eq("flag", 2), int(rng.integers(0, max_horizon + 1)))
    return mdp, query


@pytest.fixture
def random_mdp():
    return make_random_mdp


@pytest.fixture
def tiny_grid():
    return GridConfig(width=3, height=3, robot0=(1, 1), human0=(2, 2), station=(0, 0),
                      capacity=3, min_energy=1, horizon=3)


@pytest.fixture
def default_grid():
    return GridConfig()
