"""Martingale dual upper bounds and the controlled triple (X, Y^f, Z^f).

Candidate martingales are generated by functions ``f`` on the state space
(optionally time dependent, shape ``(N + 1, |E|)``)::

    dM^f_k = exp(-alpha (k+1) dt) * (f_{k+1}(X_{k+1}) - sum_y P(X_k, y) f_{k+1}(y))

and the dual bound is ``E[max_k (G_k - M^f_k)]`` with discounted gains
``G_k = exp(-alpha k dt) g(X_k)``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .chain_model import ChainModel, PayoffSpec
from .errors import PathCapExceeded, ValidationError

DEFAULT_PATH_CAP = 2 ** 20


def _as_time_function(chain: ChainModel, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    N, n = chain.horizon, chain.n_states
    if f.shape == (n,):
        f = np.broadcast_to(f, (N + 1, n))
    if f.shape != (N + 1, n):
        raise ValidationError(f"f must have shape ({n},) or ({N + 1}, {n}); got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValidationError("f has non-finite entries")
    f = np.array(f)
    f.setflags(write=False)
    return f


@dataclass(frozen=True, eq=False)
class MartingaleSpec:
    chain: ChainModel
    f: np.ndarray
    expf: np.ndarray  # expf[k] = P f_{k+1}

    def increments(self, k: int | np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Discounted increments for transitions ``i -> j`` taken at step ``k``."""
        k = np.asarray(k)
        disc = self.chain.discount ** (k + 1)
        return disc * (self.f[k + 1, j] - self.expf[k, i])

    @property
    def dMf(self) -> np.ndarray:
        """All increments as an ``(N, |E|, |E|)`` array; zero on impossible moves."""
        N = self.chain.horizon
        k = np.arange(N)[:, None, None]
        disc = self.chain.discount ** (k + 1)
        d = disc * (self.f[1:, None, :] - self.expf[:, :, None])
        return np.where(self.chain.transition[None] > 0, d, 0.0)


def martingale_from_function(chain: ChainModel, f) -> MartingaleSpec:
    f = _as_time_function(chain, f)
    expf = np.stack([chain.step_expectation(f[k + 1]) for k in range(chain.horizon)])
    return MartingaleSpec(chain, f, expf)


@dataclass(frozen=True)
class DualEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int | None
    exact: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def count_paths(chain: ChainModel, x0: int) -> int:
    """Number of positive-probability paths of length N from ``x0``."""
    adj = (chain.transition > 0).astype(object)
    counts = np.zeros(chain.n_states, dtype=object)
    counts[x0] = 1
    for _ in range(chain.horizon):
        counts = counts @ adj
    return int(sum(counts))


def enumerate_paths(chain: ChainModel, x0: int, cap: int = DEFAULT_PATH_CAP) -> tuple[np.ndarray, np.ndarray]:
    """All positive-probability paths from ``x0`` with their probabilities.

    Returns ``(paths, probs)`` with ``paths`` of shape ``(n_paths, N + 1)``.
    """
    n = count_paths(chain, x0)
    if n > cap:
        raise PathCapExceeded(
            f"{n} paths exceed the enumeration cap {cap}; use dual_bound_mc instead"
        )
    P = chain.transition
    paths = np.array([[x0]], dtype=np.int64)
    probs = np.ones(1)
    for _ in range(chain.horizon):
        last = paths[:, -1]
        rows, cols = np.nonzero(P[last])
        paths = np.column_stack([paths[rows], cols])
        probs = probs[rows] * P[last[rows], cols]
    return paths, probs


def pathwise_dual(chain: ChainModel, payoff: PayoffSpec, mart: MartingaleSpec, paths: np.ndarray) -> np.ndarray:
    """``max_k (G_k - M^f_k)`` for each row of ``paths``."""
    N = chain.horizon
    disc = chain.discount ** np.arange(N + 1)
    G = disc[None, :] * payoff.g[paths]
    k = np.arange(N)[None, :]
    dM = mart.increments(k, paths[:, :-1], paths[:, 1:])
    M = np.concatenate([np.zeros((paths.shape[0], 1)), np.cumsum(dM, axis=1)], axis=1)
    return np.max(G - M, axis=1)


def dual_bound_exact(chain: ChainModel, payoff: PayoffSpec, f, x0: int | None = None, cap: int = DEFAULT_PATH_CAP) -> DualEstimate:
    payoff.check_for(chain)
    start = chain.center if x0 is None else int(x0)
    mart = martingale_from_function(chain, f)
    paths, probs = enumerate_paths(chain, start, cap)
    vals = pathwise_dual(chain, payoff, mart, paths)
    return DualEstimate(float(probs @ vals), 0.0, int(paths.shape[0]), None, True)


def path_uniforms(seed: int, first: int, count: int, n_steps: int) -> np.ndarray:
    """Uniforms in [0, 1) for paths ``first .. first + count - 1``.

    Path ``i`` owns the counter blocks ``[i * B, (i + 1) * B)`` of a
    Philox4x64 stream keyed by ``seed``, with ``B = ceil(n_steps / 4)``; step
    ``k`` uses the ``k``-th 64-bit word of that range, top 53 bits. The
    numbers for a path therefore depend only on ``(seed, i)``.
    """
    blocks = -(-n_steps // 4)
    bitgen = np.random.Philox(key=int(seed) & ((1 << 128) - 1))
    bitgen.advance(first * blocks)
    raw = bitgen.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :n_steps]
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def simulate_paths(chain: ChainModel, x0: int, seed: int, first: int, count: int) -> np.ndarray:
    N = chain.horizon
    u = path_uniforms(seed, first, count, N)
    cum = np.cumsum(chain.transition, axis=1)
    cum[:, -1] = 1.0
    paths = np.empty((count, N + 1), dtype=np.int64)
    paths[:, 0] = x0
    for k in range(N):
        c = cum[paths[:, k]]
        nxt = (u[:, k, None] >= c).sum(axis=1)
        paths[:, k + 1] = np.minimum(nxt, chain.n_states - 1)
    return paths


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SNELLKIT_THREADS", "1")))
    except ValueError:
        return 1


def dual_bound_mc(
    chain: ChainModel,
    payoff: PayoffSpec,
    f,
    n_paths: int,
    seed: int,
    x0: int | None = None,
    chunk: int = 8192,
    workers: int | None = None,
) -> DualEstimate:
    """Monte Carlo estimate of the dual bound with a standard error.

    Paths are simulated in chunks, possibly on several threads; per-path
    randomness comes from :func:`path_uniforms` so the result is the same
    for any chunking or thread count.
    """
    if n_paths < 2:
        raise ValidationError(f"n_paths must be >= 2, got {n_paths!r}")
    payoff.check_for(chain)
    start = chain.center if x0 is None else int(x0)
    mart = martingale_from_function(chain, f)
    out = np.empty(int(n_paths))
    starts = range(0, int(n_paths), chunk)

    def run(first: int) -> None:
        count = min(chunk, n_paths - first)
        paths = simulate_paths(chain, start, seed, first, count)
        out[first:first + count] = pathwise_dual(chain, payoff, mart, paths)

    n_workers = workers if workers is not None else _workers()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, starts))
    else:
        for first in starts:
            run(first)
    mean = float(np.sum(out) / n_paths)
    var = float(np.sum((out - mean) ** 2) / (n_paths - 1))
    return DualEstimate(mean, float(np.sqrt(var / n_paths)), int(n_paths), int(seed), False)


@dataclass(frozen=True, eq=False)
class ControlledTriple:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray


def controlled_trajectory(
    chain: ChainModel,
    payoff: PayoffSpec,
    f,
    path: Sequence[int],
    y: float = 0.0,
    z: float | None = None,
) -> ControlledTriple:
    """The additive functional ``Y^f`` and running maximum ``Z^f`` along a path.

    ``Y^f_k = y + sum_{j<k} e^{-alpha j dt} Lf_j(X_j) dt`` and
    ``Z^f_k = max_{j<=k}(f_0(x_0) + G_j - e^{-alpha j dt} f_j(X_j) + Y^f_j)`` floored
    at ``z``, where ``Lf_j = (e^{-alpha dt} P f_{j+1} - f_j) / dt``. With
    ``y = 0``, ``Z^f_N = max_k (G_k - M^f_k)`` floored at ``z``.
    """
    path = np.asarray(path, dtype=np.int64)
    N = chain.horizon
    if path.shape != (N + 1,):
        raise ValidationError(f"path must have {N + 1} states, got {path.shape}")
    g = payoff.g
    x0 = int(path[0])
    if z is None:
        z = g[x0] + y
    if z < g[x0] + y:
        raise ValidationError(f"inadmissible start: z = {z!r} < g(x0) + y = {g[x0] + y!r}")
    F = _as_time_function(chain, f)
    beta = chain.discount
    disc = beta ** np.arange(N + 1)
    k = np.arange(N)
    expf = np.stack([chain.step_expectation(F[j + 1]) for j in range(N)])
    Lf_dt = beta * expf[k, path[:-1]] - F[k, path[:-1]]
    Y = y + np.concatenate([[0.0], np.cumsum(disc[:-1] * Lf_dt)])
    inner = F[0, x0] + disc * g[path] - disc * F[np.arange(N + 1), path] + Y
    Z = np.maximum(np.maximum.accumulate(inner), z)
    return ControlledTriple(path.copy(), Y, Z)
