"""Snell envelope by backward induction and stopping rules on a chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .chain_model import ChainModel, PayoffSpec
from .errors import NumericalError, ValidationError

CONTACT_TOL = 1e-10

RuleKind = Literal["minimal", "maximal", "epsilon", "custom"]


@dataclass(frozen=True, eq=False)
class SnellSolution:
    """Value surface of a finite-horizon stopping problem.

    ``S[k, i]`` is the value at step ``k`` in state ``i`` measured in
    time-``k`` money (discounting is folded into each backward step), so the
    discounted envelope along a path is ``exp(-alpha k dt) * S[k, X_k]``.
    ``cont`` has one row fewer than ``S``: there is no continuation at the
    horizon.
    """

    chain: ChainModel
    payoff: PayoffSpec
    S: np.ndarray
    cont: np.ndarray
    stop_region: np.ndarray
    contact_tol: float = CONTACT_TOL

    @property
    def G(self) -> np.ndarray:
        return np.broadcast_to(self.payoff.g, self.S.shape)

    @property
    def horizon(self) -> int:
        return self.S.shape[0] - 1

    def value_at_root(self, x: float | None = None) -> float:
        i = self.chain.center if x is None else self.chain.index_of(x)
        return float(self.S[0, i])


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Stop at the first step ``k`` with ``region[k, X_k]`` true."""

    kind: RuleKind
    region: np.ndarray
    epsilon: float | None = None

    def __post_init__(self) -> None:
        region = np.array(self.region, dtype=bool)
        if region.ndim != 2:
            raise ValidationError("stopping region must be a (steps + 1, states) matrix")
        if not region[-1].all():
            raise ValidationError("a stopping rule must stop at the horizon")
        region.setflags(write=False)
        object.__setattr__(self, "region", region)


def solve_snell(chain: ChainModel, payoff: PayoffSpec, contact_tol: float = CONTACT_TOL) -> SnellSolution:
    payoff.check_for(chain)
    N = chain.horizon
    g = payoff.g
    beta = chain.discount
    S = np.empty((N + 1, chain.n_states))
    cont = np.empty((N, chain.n_states))
    S[N] = g
    for k in range(N - 1, -1, -1):
        cont[k] = beta * chain.step_expectation(S[k + 1])
        S[k] = np.maximum(g, cont[k])
    stop = S - g[None, :] <= contact_tol
    stop[N] = True
    for a in (S, cont, stop):
        a.setflags(write=False)
    return SnellSolution(chain, payoff, S, cont, stop, contact_tol)


def stopping_rule(solution: SnellSolution, kind: RuleKind = "minimal", epsilon: float = 0.0, decomposition=None) -> StoppingRule:
    """Minimal, maximal or epsilon-optimal rule read off a solution.

    The maximal rule stops as soon as the compensator is about to increase,
    so it needs the decomposition of the same solution.
    """
    tol = solution.contact_tol
    gap = solution.S - solution.payoff.g[None, :]
    if kind == "minimal":
        return StoppingRule("minimal", solution.stop_region)
    if kind == "epsilon":
        if epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {epsilon!r}")
        region = gap <= max(epsilon, tol)
        region[-1] = True
        return StoppingRule("epsilon", region, float(epsilon))
    if kind == "maximal":
        if decomposition is None:
            raise ValidationError("the maximal rule needs a Decomposition (first time A increases)")
        region = np.ones_like(solution.stop_region)
        region[:-1] = decomposition.dA > tol
        return StoppingRule("maximal", region)
    raise ValidationError(f"unknown rule kind {kind!r}")


def rule_values(chain: ChainModel, payoff: PayoffSpec, rule: StoppingRule) -> np.ndarray:
    """Conditional values ``U[k, i]`` of following ``rule`` from node ``(k, i)``."""
    N = chain.horizon
    if rule.region.shape != (N + 1, chain.n_states):
        raise ValidationError(f"rule region has shape {rule.region.shape}, chain needs {(N + 1, chain.n_states)}")
    g = payoff.g
    U = np.empty((N + 1, chain.n_states))
    U[N] = g
    for k in range(N - 1, -1, -1):
        U[k] = np.where(rule.region[k], g, chain.discount * chain.step_expectation(U[k + 1]))
    return U


def evaluate_rule(chain: ChainModel, payoff: PayoffSpec, rule: StoppingRule, x0: int | None = None) -> float:
    """Expected discounted payoff of ``rule`` started in state index ``x0``.

    Computed forward: the law of the not-yet-stopped chain is pushed through
    ``P`` one step at a time and stopped mass pays ``e^{-alpha k dt} g``.
    """
    N = chain.horizon
    if rule.region.shape != (N + 1, chain.n_states):
        raise ValidationError(f"rule region has shape {rule.region.shape}, chain needs {(N + 1, chain.n_states)}")
    payoff.check_for(chain)
    start = chain.center if x0 is None else int(x0)
    alive = np.zeros(chain.n_states)
    alive[start] = 1.0
    total = 0.0
    disc = 1.0
    for k in range(N + 1):
        stopped = np.where(rule.region[k], alive, 0.0)
        total += disc * float(stopped @ payoff.g)
        alive = alive - stopped
        if k < N:
            alive = alive @ chain.transition
            disc *= chain.discount
    return total


@dataclass(frozen=True, eq=False)
class PerpetualSolution:
    values: np.ndarray
    cont: np.ndarray
    stop_region: np.ndarray
    steps: int
    error_bound: float


def solve_perpetual(
    chain: ChainModel,
    payoff: PayoffSpec,
    tol: float = 1e-9,
    max_steps: int = 2_000_000,
    contact_tol: float = CONTACT_TOL,
) -> PerpetualSolution:
    """Infinite-horizon value by value iteration from ``g``.

    Iterates ``V <- max(g, beta P V)`` until the contraction bound
    ``beta / (1 - beta) * sup|V_{n+1} - V_n|`` falls below ``tol``. Needs
    ``alpha > 0`` unless the chain is absorbed quickly enough for the
    changes to vanish on their own.
    """
    payoff.check_for(chain)
    g = payoff.g
    beta = chain.discount
    P = chain.sparse
    V = g.copy()
    factor = beta / (1.0 - beta) if beta < 1.0 else np.inf
    bound = np.inf
    for step in range(1, max_steps + 1):
        cont = beta * (P @ V)
        V_new = np.maximum(g, cont)
        change = float(np.max(np.abs(V_new - V)))
        V = V_new
        bound = factor * change if change > 0 else 0.0
        if bound <= tol:
            break
    else:
        raise NumericalError(
            f"value iteration did not converge in {max_steps} steps (error bound {bound:.3g})"
        )
    cont = beta * (P @ V)
    stop = V - g <= contact_tol
    return PerpetualSolution(V, cont, stop, step, bound)
