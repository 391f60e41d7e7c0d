"""Discrete Doob-Meyer decomposition of the Snell envelope and the density dA/dD^-."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain_model import ChainModel, PayoffSpec, discrete_generator
from .errors import AbsoluteContinuityViolated, ValidationError
from .snell_engine import SnellSolution, solve_snell

TOL_DEN = 1e-12
TOL_NUM = 1e-10


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Increments of ``S = M* - A`` and of the gains compensator ``D``.

    Everything is in time-``k`` money; multiply row ``k`` by
    ``exp(-alpha k dt)`` to get increments of the discounted processes.

    dA[k, i]        predictable decrease of the envelope over step k
    dM[k, i, j]     martingale increment for the transition i -> j at step k
    dD[k, i]        compensator increment of the gains, Lg(i) dt
    dDplus, dDminus positive and negative parts of dD
    mu[k, i]        dA / dDminus, NaN where dDminus vanishes
    """

    solution: SnellSolution
    dA: np.ndarray
    dM: np.ndarray
    dD: np.ndarray
    dDplus: np.ndarray
    dDminus: np.ndarray
    mu: np.ndarray

    @property
    def chain(self) -> ChainModel:
        return self.solution.chain

    def discount_factors(self) -> np.ndarray:
        N = self.solution.horizon
        return self.chain.discount ** np.arange(N + 1)

    def path_processes(self, path: Sequence[int]) -> dict[str, np.ndarray]:
        """Discounted ``S``, ``M*``, ``A`` and ``D`` along one trajectory.

        ``M*`` and ``A`` start at 0 and ``S`` at ``S_0``, so
        ``S_k = S_0 + M*_k - A_k`` holds path by path.
        """
        path = np.asarray(path, dtype=int)
        N = self.solution.horizon
        if path.shape != (N + 1,):
            raise ValidationError(f"path must have {N + 1} states, got {path.shape}")
        disc = self.discount_factors()
        k = np.arange(N)
        M = np.concatenate([[0.0], np.cumsum(disc[:-1] * self.dM[k, path[:-1], path[1:]])])
        A = np.concatenate([[0.0], np.cumsum(disc[:-1] * self.dA[k, path[:-1]])])
        D = np.concatenate([[0.0], np.cumsum(disc[:-1] * self.dD[k, path[:-1]])])
        S = disc * self.solution.S[np.arange(N + 1), path]
        return {"S": S, "M": M, "A": A, "D": D}


def decompose(chain: ChainModel, payoff: PayoffSpec, solution: SnellSolution | None = None) -> Decomposition:
    if solution is None:
        solution = solve_snell(chain, payoff)
    N = chain.horizon
    if solution.S.shape != (N + 1, chain.n_states) or not np.array_equal(solution.S[N], payoff.g):
        raise ValidationError("solution was not produced from this chain and payoff")
    beta = chain.discount
    S = solution.S
    dA = S[:-1] - solution.cont
    dA = np.where(dA < 0.0, 0.0, dA)
    expS = np.stack([chain.step_expectation(S[k + 1]) for k in range(N)])
    dM = beta * (S[1:, None, :] - expS[:, :, None])
    dM = np.where(chain.transition[None, :, :] > 0.0, dM, 0.0)
    Lg_dt = discrete_generator(chain, payoff) * chain.dt
    dD = np.broadcast_to(Lg_dt, dA.shape).copy()
    dDplus = np.maximum(dD, 0.0)
    dDminus = np.maximum(-dD, 0.0)
    mu = np.full(dA.shape, np.nan)
    defined = dDminus > TOL_DEN
    mu[defined] = dA[defined] / dDminus[defined]
    for a in (dA, dM, dD, dDplus, dDminus, mu):
        a.setflags(write=False)
    return Decomposition(solution, dA, dM, dD, dDplus, dDminus, mu)


def mu_density(decomposition: Decomposition, tol_den: float = TOL_DEN, tol_num: float = TOL_NUM) -> np.ndarray:
    """Density of dA with respect to dD^-, NaN where dD^- is (numerically) zero.

    Raises AbsoluteContinuityViolated when dA charges a node that dD^- does
    not; on a correct decomposition this never happens.
    """
    dA, dDm = decomposition.dA, decomposition.dDminus
    undefined = dDm <= tol_den
    offending = np.argwhere(undefined & (dA > tol_num))
    if offending.size:
        nodes = [(int(k), int(i)) for k, i in offending]
        k, i = nodes[0]
        raise AbsoluteContinuityViolated(
            f"dA = {dA[k, i]:.3g} > 0 at node (k={k}, state={i}) where dD^- = {dDm[k, i]:.3g}",
            nodes,
        )
    mu = np.full(dA.shape, np.nan)
    mu[~undefined] = dA[~undefined] / dDm[~undefined]
    return mu


@dataclass(frozen=True)
class BoundReport:
    max_violation: float
    lower_violation: float
    upper_violation: float
    worst_node: tuple[int, int]
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol


def increment_bound_check(decomposition: Decomposition, tol: float = 1e-10) -> BoundReport:
    """Check ``0 <= dA <= dD^-`` node by node and report the worst excess."""
    dA, dDm = decomposition.dA, decomposition.dDminus
    lower = np.maximum(-dA, 0.0)
    upper = np.maximum(dA - dDm, 0.0)
    worst = np.maximum(lower, upper)
    k, i = np.unravel_index(int(np.argmax(worst)), worst.shape)
    return BoundReport(
        float(worst.max(initial=0.0)), float(lower.max(initial=0.0)), float(upper.max(initial=0.0)),
        (int(k), int(i)), tol,
    )


@dataclass(frozen=True, eq=False)
class ApproxReport:
    """Partition approximations of ``A`` at probe times.

    ``errors[t][l]`` is the root-mean-square deviation of ``A^{n_l}_t`` from
    ``A_t`` and ``cesaro[t][L-1]`` that of the average of the first ``L``
    levels; both are exact expectations over the chain law.
    """

    levels: list[int]
    partitions: list[np.ndarray]
    probe_times: list[int]
    A_mean: dict[int, float]
    An_at: dict[int, list[float]]
    errors: dict[int, list[float]]
    cesaro: dict[int, list[float]]
    total_mass: float
    x0: int = field(default=0)


def _additive_moments(chain: ChainModel, weights: np.ndarray, x0: int) -> tuple[float, float]:
    """First two moments of ``sum_s weights[s, X_s]`` for a chain started at x0."""
    m1 = np.zeros(chain.n_states)
    m2 = np.zeros(chain.n_states)
    for s in range(weights.shape[0] - 1, -1, -1):
        w = weights[s]
        pm1 = chain.step_expectation(m1)
        pm2 = chain.step_expectation(m2)
        m2 = w * w + 2.0 * w * pm1 + pm2
        m1 = w + pm1
    return float(m1[x0]), float(m2[x0])


def partition_approximation(
    chain: ChainModel,
    payoff: PayoffSpec,
    probe_times: Sequence[int],
    levels: Sequence[int] | int | None = None,
    x0: int | None = None,
    solution: SnellSolution | None = None,
) -> ApproxReport:
    """Dyadic partition approximations ``A^n`` and their Cesaro averages.

    Level ``n`` splits ``[0, N]`` into ``2**n`` equal blocks and sums the
    conditional expected drops of the envelope over completed blocks. The
    exact ``A`` of the full ``N``-step solution is the reference.
    """
    N = chain.horizon
    if levels is None:
        levels = list(range(1, int(np.log2(N)) + 1))
    elif isinstance(levels, (int, np.integer)):
        levels = list(range(1, int(levels) + 1))
    levels = [int(n) for n in levels]
    if not levels:
        raise ValidationError("need at least one partition level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValidationError(f"levels {levels} must be strictly increasing (nested, refining partitions)")
    for n in levels:
        if n < 0 or N % (2 ** n):
            raise ValidationError(f"level {n} does not nest in horizon N={N}: 2**{n} must divide N")
    probes = [int(t) for t in probe_times]
    if any(t < 0 or t > N for t in probes):
        raise ValidationError(f"probe times must lie in [0, {N}]")
    if solution is None:
        solution = solve_snell(chain, payoff)
    start = chain.center if x0 is None else int(x0)
    disc = chain.discount ** np.arange(N + 1)
    Sbar = disc[:, None] * solution.S
    a = disc[:-1, None] * (solution.S[:-1] - solution.cont)

    partitions = []
    coarse = []
    for n in levels:
        m = N // 2 ** n
        pts = np.arange(0, N + 1, m)
        partitions.append(pts)
        c = np.zeros((N, chain.n_states))
        for t0, t1 in zip(pts[:-1], pts[1:]):
            v = Sbar[t1]
            for _ in range(m):
                v = chain.step_expectation(v)
            c[t0] = Sbar[t0] - v
        coarse.append((pts, c))

    A_mean, An_at, errors, cesaro = {}, {}, {}, {}
    for t in probes:
        exact = a[:t]
        A_mean[t] = _additive_moments(chain, exact, start)[0] if t else 0.0
        per_level = []
        means = []
        running = np.zeros((t, chain.n_states))
        ces = []
        for L, (pts, c) in enumerate(coarse, start=1):
            # only blocks that end by time t have been booked
            done = pts[1:][pts[1:] <= t]
            w = np.zeros((t, chain.n_states))
            if done.size:
                last = int(done[-1])
                w[:last] = c[:last]
            running += w
            if t:
                mean, _ = _additive_moments(chain, w, start)
                _, sq = _additive_moments(chain, w - exact, start)
                _, sqc = _additive_moments(chain, running / L - exact, start)
            else:
                mean = sq = sqc = 0.0
            means.append(mean)
            per_level.append(float(np.sqrt(max(sq, 0.0))))
            ces.append(float(np.sqrt(max(sqc, 0.0))))
        An_at[t], errors[t], cesaro[t] = means, per_level, ces
    total = _additive_moments(chain, a, start)[0]
    return ApproxReport(levels, partitions, probes, A_mean, An_at, errors, cesaro, total, start)
