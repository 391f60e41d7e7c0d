"""Finite-state Markov chain models, payoffs and the discrete generator."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .errors import ProbabilityOutOfRange, ValidationError

ROW_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChainModel:
    """Discrete-time chain on an ordered finite state space.

    ``transition[i, j]`` is the one-step probability of moving from state ``i``
    to state ``j``. Each step lasts ``dt`` model time units and is discounted
    by ``exp(-alpha * dt)``.
    """

    states: np.ndarray
    transition: np.ndarray
    dt: float = 1.0
    alpha: float = 0.0
    horizon: int = 1

    def __post_init__(self) -> None:
        states = _frozen(self.states).ravel()
        P = _frozen(self.transition)
        n = states.size
        if n < 1:
            raise ValidationError("state space is empty")
        if not np.all(np.isfinite(states)):
            raise ValidationError("state coordinates must be finite")
        if n > 1 and not np.all(np.diff(states) > 0):
            raise ValidationError("states must be strictly increasing")
        if P.shape != (n, n):
            raise ValidationError(f"transition has shape {P.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(P)):
            raise ValidationError("transition contains non-finite entries")
        bad = np.argwhere((P < 0.0) | (P > 1.0))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"transition[{i}, {j}] = {float(P[i, j])!r} outside [0, 1]")
        dev = np.abs(P.sum(axis=1) - 1.0)
        if np.any(dev > ROW_SUM_TOL):
            i = int(np.argmax(dev > ROW_SUM_TOL))
            raise ValidationError(f"row {i} of transition sums to {float(P[i].sum())!r}, not 1")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be > 0, got {self.dt!r}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValidationError(f"alpha must be >= 0, got {self.alpha!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError(f"horizon must be an integer >= 1, got {self.horizon!r}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def discount(self) -> float:
        """One-step discount factor exp(-alpha * dt)."""
        return float(np.exp(-self.alpha * self.dt))

    @property
    def center(self) -> int:
        return self.n_states // 2

    @cached_property
    def sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.transition)

    def step_expectation(self, f: np.ndarray) -> np.ndarray:
        """Row expectations ``P @ f`` (undiscounted)."""
        if self.n_states > 64:
            return self.sparse @ f
        return self.transition @ f

    def index_of(self, x: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.states - x)))
        if abs(self.states[i] - x) > tol * max(1.0, abs(x)):
            raise ValidationError(f"{x!r} is not a state of the chain")
        return i

    def with_horizon(self, horizon: int) -> "ChainModel":
        return ChainModel(self.states, self.transition, self.dt, self.alpha, horizon)


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """Payoff values ``g(x)`` tabulated on a chain's state space."""

    g: np.ndarray
    name: str = "payoff"

    def __post_init__(self) -> None:
        g = _frozen(self.g).ravel()
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"payoff {self.name!r} has non-finite entries")
        object.__setattr__(self, "g", g)

    def check_for(self, chain: ChainModel) -> None:
        if self.g.size != chain.n_states:
            raise ValidationError(
                f"payoff {self.name!r} has {self.g.size} values for {chain.n_states} states"
            )


def payoff_from_function(chain: ChainModel, fn: Callable[[np.ndarray], np.ndarray], name: str = "payoff") -> PayoffSpec:
    return PayoffSpec(np.asarray(fn(chain.states), dtype=float), name)


def put_payoff(strike: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.maximum(strike - np.asarray(x, dtype=float), 0.0)


def call_payoff(strike: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.maximum(np.asarray(x, dtype=float) - strike, 0.0)


def power_payoff(power: float, coef: float = 1.0, offset: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """``offset + coef * x**power``; ``power_payoff(2, -1, 4)`` is 4 - x**2."""
    return lambda x: offset + coef * np.asarray(x, dtype=float) ** power


def build_random_walk(n_states: int, horizon: int = 1, dt: float = 1.0, alpha: float = 0.0) -> ChainModel:
    """Symmetric nearest-neighbour walk on ``-(n-1)/2, ..., (n-1)/2``.

    Both endpoints are absorbing. ``n_states`` must be odd and at least 3 so
    that state 0 exists.
    """
    if int(n_states) != n_states or n_states < 3:
        raise ValidationError(f"random walk needs n_states >= 3, got {n_states!r}")
    if n_states % 2 == 0:
        raise ValidationError(f"random walk needs an odd n_states, got {n_states}")
    n = int(n_states)
    m = (n - 1) // 2
    P = np.zeros((n, n))
    P[0, 0] = P[-1, -1] = 1.0
    idx = np.arange(1, n - 1)
    P[idx, idx - 1] = 0.5
    P[idx, idx + 1] = 0.5
    return ChainModel(np.arange(-m, m + 1, dtype=float), P, dt, alpha, horizon)


def _trinomial_probs(x: np.ndarray, drift: np.ndarray, var: np.ndarray, dt: float):
    h_up = x[2:] - x[1:-1]
    h_dn = x[1:-1] - x[:-2]
    m = drift * dt
    q = var * dt + m * m
    pu = (q + m * h_dn) / (h_up * (h_up + h_dn))
    pd = (q - m * h_up) / (h_dn * (h_up + h_dn))
    return pu, pd, 1.0 - pu - pd


def discretize_diffusion(
    drift: Callable[[np.ndarray], np.ndarray],
    vol: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float] | None = None,
    n_states: int | None = None,
    dt: float = 1e-3,
    alpha: float = 0.0,
    horizon: int = 1,
    grid: Sequence[float] | None = None,
) -> ChainModel:
    """Moment-matched trinomial chain for ``dX = drift dt + vol dW``.

    Interior rows jump to the two neighbouring grid points or stay put, with
    probabilities chosen so that ``E[dX] = drift * dt`` and
    ``Var[dX] = vol**2 * dt`` hold exactly. The grid may be non-uniform
    (pass ``grid``); otherwise ``n_states`` equally spaced points on
    ``interval``. Both endpoints are absorbing.
    """
    if grid is None:
        if interval is None or n_states is None:
            raise ValidationError("give either grid or (interval, n_states)")
        a, b = map(float, interval)
        if not a < b:
            raise ValidationError(f"interval must satisfy a < b, got {interval!r}")
        if n_states < 3:
            raise ValidationError("need at least 3 grid points")
        x = np.linspace(a, b, int(n_states))
    else:
        x = np.asarray(grid, dtype=float)
        if x.size < 3 or not np.all(np.diff(x) > 0):
            raise ValidationError("grid must be strictly increasing with >= 3 points")
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt!r}")
    xi = x[1:-1]
    mu = np.broadcast_to(np.asarray(drift(xi), dtype=float), xi.shape)
    sig = np.broadcast_to(np.asarray(vol(xi), dtype=float), xi.shape)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sig))):
        raise ValidationError("drift/vol are not finite on the grid interior")
    if np.any(sig <= 0):
        k = int(np.argmax(sig <= 0))
        raise ValidationError(f"vol({xi[k]!r}) = {sig[k]!r} must be > 0 on the grid interior")
    var = sig * sig

    def violations(step: float) -> np.ndarray:
        pu, pd, pm = _trinomial_probs(x, mu, var, step)
        eps = 1e-14
        return (pu < -eps) | (pd < -eps) | (pm < -eps)

    bad = violations(dt)
    if np.any(bad):
        k = int(np.argmax(bad))
        suggestion = None
        trial = dt
        for _ in range(80):
            trial *= 0.5
            if not np.any(violations(trial)):
                suggestion = trial
                break
        hint = (
            f"try dt <= {suggestion:.6g}" if suggestion is not None
            else "drift dominates diffusion at this spacing; refine the grid"
        )
        raise ProbabilityOutOfRange(
            f"trinomial probabilities leave [0, 1] at state {k + 1} (x = {xi[k]:.6g}) with dt = {dt:.6g}; {hint}",
            state_index=k + 1,
            state=float(xi[k]),
            suggested_dt=suggestion,
        )
    pu, pd, pm = _trinomial_probs(x, mu, var, dt)
    pu, pd, pm = (np.clip(p, 0.0, 1.0) for p in (pu, pd, pm))
    n = x.size
    P = np.zeros((n, n))
    P[0, 0] = P[-1, -1] = 1.0
    idx = np.arange(1, n - 1)
    P[idx, idx + 1] = pu
    P[idx, idx - 1] = pd
    P[idx, idx] = np.maximum(1.0 - pu - pd, 0.0)
    return ChainModel(x, P, dt, alpha, horizon)


def discrete_generator(chain: ChainModel, payoff: PayoffSpec) -> np.ndarray:
    """Per-unit-time compensator ``(exp(-alpha dt) P g - g) / dt``."""
    payoff.check_for(chain)
    g = payoff.g
    return (chain.discount * chain.step_expectation(g) - g) / chain.dt


def compensated_increments(chain: ChainModel, payoff: PayoffSpec) -> np.ndarray:
    """Matrix ``C[i, j]`` of one-step increments of the compensated gains.

    Moving from ``i`` to ``j`` at step ``k`` changes
    ``g(X_k) e^{-alpha k dt} - sum_{j<k} e^{-alpha j dt} Lg(X_j) dt`` by
    ``e^{-alpha k dt} * C[i, j]``. Each row has zero mean under ``P``.
    """
    g = payoff.g
    Lg = discrete_generator(chain, payoff)
    return chain.discount * g[None, :] - g[:, None] - (Lg * chain.dt)[:, None]
