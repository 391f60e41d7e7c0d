"""Named test problems shared by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from oracles import random_chain_data, small_shapes
from snellkit import ChainModel, PayoffSpec, build_random_walk, payoff_from_function, power_payoff


def one_step_square():
    chain = build_random_walk(3, horizon=1)
    return chain, payoff_from_function(chain, power_payoff(2), "x^2")


def two_step_square():
    chain = build_random_walk(5, horizon=2)
    return chain, payoff_from_function(chain, power_payoff(2), "x^2")


def concave_walk(n_states: int = 5, horizon: int = 4):
    chain = build_random_walk(n_states, horizon=horizon)
    return chain, payoff_from_function(chain, power_payoff(2, -1.0, 4.0), "4-x^2")


def constant_walk(c: float = 1.5, alpha: float = 0.0):
    chain = build_random_walk(5, horizon=3, alpha=alpha)
    return chain, PayoffSpec(np.full(5, c), "constant")


def killed_put_walk():
    chain = build_random_walk(7, horizon=5, dt=0.5, alpha=0.2)
    return chain, payoff_from_function(chain, lambda x: np.maximum(1.0 - x, 0.0), "put")


def named_fixtures():
    return {
        "one_step_square": one_step_square(),
        "two_step_square": two_step_square(),
        "concave_walk": concave_walk(),
        "constant_walk": constant_walk(),
        "killed_constant": constant_walk(2.0, alpha=0.3),
        "killed_put_walk": killed_put_walk(),
    }


def random_small_problems(count: int, seed: int = 20261014):
    """``count`` random chains with at most 12 state-time nodes."""
    rng = np.random.default_rng(seed)
    shapes = small_shapes()
    out = []
    for t in range(count):
        n, N = shapes[t % len(shapes)]
        states, P, g, dt, alpha, N = random_chain_data(rng, n, N)
        chain = ChainModel(states, P, dt, alpha, N)
        out.append((chain, PayoffSpec(g, f"random{t}")))
    return out


def random_problems(count: int, n_states: int = 6, horizon: int = 4, seed: int = 7):
    rng = np.random.default_rng(seed)
    out = []
    for t in range(count):
        states, P, g, dt, alpha, N = random_chain_data(rng, n_states, horizon)
        out.append((ChainModel(states, P, dt, alpha, N), PayoffSpec(g, f"random{t}")))
    return out
