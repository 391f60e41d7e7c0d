"""Scale function, harmonic pair (psi, phi) and hitting probabilities of a 1-D diffusion.

The diffusion is ``dX = drift(X) dt + vol(X) dW`` on ``[a, b]``, killed at
rate ``alpha``. ``psi`` and ``phi`` are the increasing and decreasing
positive solutions of ``0.5 vol^2 u'' + drift u' - alpha u = 0``, both
normalised to 1 at the anchor; ``stilde = psi / phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import solve_banded

from .chain_model import ChainModel
from .errors import NonMonotoneError, NumericalError, ValidationError

Coefficient = Callable[[np.ndarray], np.ndarray]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class DiffusionSpec:
    """A regular diffusion on ``interval`` with killing rate ``alpha``.

    ``exact_pair`` optionally returns un-normalised closed-form ``(psi, phi)``
    values; when present they pin the boundary values of the ODE solve.
    """

    interval: tuple[float, float]
    drift: Coefficient
    vol: Coefficient
    alpha: float = 0.0
    name: str = "diffusion"
    exact_pair: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        a, b = map(float, self.interval)
        if not a < b:
            raise ValidationError(f"interval must satisfy a < b, got {self.interval!r}")
        if not self.alpha >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha!r}")
        object.__setattr__(self, "interval", (a, b))

    def coefficients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        mu = np.broadcast_to(np.asarray(self.drift(x), dtype=float), x.shape)
        sig = np.broadcast_to(np.asarray(self.vol(x), dtype=float), x.shape)
        return mu, sig

    def uniform_grid(self, n: int) -> np.ndarray:
        return np.linspace(*self.interval, int(n))

    def geometric_grid(self, n: int) -> np.ndarray:
        a, b = self.interval
        if a <= 0:
            raise ValidationError("a geometric grid needs a positive left endpoint")
        return np.geomspace(a, b, int(n))


def brownian(interval=(-1.0, 1.0), mu: float = 0.0, sigma: float = 1.0, alpha: float = 0.0) -> DiffusionSpec:
    """Brownian motion with constant drift; closed-form pair ``exp(lambda_pm x)``."""
    lam_p, lam_m = _exponents(0.5 * sigma ** 2, mu, alpha)

    def pair(x):
        return np.exp(lam_p * x), np.exp(lam_m * x)

    return DiffusionSpec(
        interval, lambda x: np.full_like(x, mu, dtype=float), lambda x: np.full_like(x, sigma, dtype=float),
        alpha, "brownian", pair if alpha > 0 else None,
    )


def gbm(interval=(0.01, 1000.0), r: float = 0.05, sigma: float = 0.4, alpha: float | None = None) -> DiffusionSpec:
    """Geometric Brownian motion ``dX = r X dt + sigma X dW``; pair ``x**lambda_pm``."""
    alpha = r if alpha is None else alpha
    lam_p, lam_m = _exponents(0.5 * sigma ** 2, r - 0.5 * sigma ** 2, alpha)

    def pair(x):
        return x ** lam_p, x ** lam_m

    return DiffusionSpec(
        interval, lambda x: r * np.asarray(x, dtype=float), lambda x: sigma * np.asarray(x, dtype=float),
        alpha, "gbm", pair if alpha > 0 else None,
    )


def _exponents(a2: float, a1: float, alpha: float) -> tuple[float, float]:
    """Roots of ``a2 l^2 + a1 l - alpha = 0``, larger first."""
    disc = np.sqrt(a1 * a1 + 4.0 * a2 * alpha)
    return (-a1 + disc) / (2.0 * a2), (-a1 - disc) / (2.0 * a2)


def _check_grid(grid) -> np.ndarray:
    x = np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size < 3 or not np.all(np.diff(x) > 0):
        raise ValidationError("grid must be strictly increasing with at least 3 points")
    return x


def scale_function(diffusion: DiffusionSpec, grid: Sequence[float] | None = None, anchor: int | None = None, n: int = 2001) -> np.ndarray:
    """Scale function on ``grid`` with ``s(c) = 0`` and ``s'(c) = 1`` at the anchor.

    ``s'(x) = exp(-int_c^x 2 drift / vol^2)``; both integrals use 8-point
    Gauss-Legendre rules per grid cell, the inner one nested inside the outer.
    """
    x = _check_grid(diffusion.uniform_grid(n) if grid is None else grid)
    c = x.size // 2 if anchor is None else int(anchor)

    def q(y):
        mu, sig = diffusion.coefficients(y)
        return 2.0 * mu / (sig * sig)

    lo, hi = x[:-1], x[1:]
    half = 0.5 * (hi - lo)
    # outer nodes t_m in each cell, inner rule on [lo, t_m]
    t = lo[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
    inner_half = 0.5 * (t - lo[:, None])
    u = lo[:, None, None] + inner_half[:, :, None] * (_GL_NODES[None, None, :] + 1.0)
    with np.errstate(all="ignore"):
        cell_q = half * (q(t) @ _GL_WEIGHTS)
        partial = inner_half * (q(u) @ _GL_WEIGHTS)
    if not (np.all(np.isfinite(cell_q)) and np.all(np.isfinite(partial))):
        raise NumericalError("2 drift / vol^2 is not integrable on the grid")
    I = np.concatenate([[0.0], np.cumsum(cell_q)])
    I -= I[c]
    with np.errstate(over="ignore"):
        ds = half * (np.exp(-(I[:-1, None] + partial)) @ _GL_WEIGHTS)
    s = np.concatenate([[0.0], np.cumsum(ds)])
    s -= s[c]
    if not np.all(np.isfinite(s)):
        raise NumericalError("scale function overflowed; shrink the interval")
    if not np.all(np.diff(s) > 0):
        raise NonMonotoneError("scale function is not strictly increasing on the grid")
    return s


@dataclass(frozen=True, eq=False)
class HarmonicPair:
    grid: np.ndarray
    s: np.ndarray | None
    psi: np.ndarray
    phi: np.ndarray
    stilde: np.ndarray
    anchor: float
    alpha: float
    degenerate: bool = False

    @cached_property
    def _log_psi(self):
        return CubicSpline(self.grid, np.log(self.psi))

    @cached_property
    def _log_phi(self):
        return CubicSpline(self.grid, np.log(self.phi))

    @cached_property
    def _s_spline(self):
        return CubicSpline(self.grid, self.stilde)

    @cached_property
    def _inverse(self):
        return PchipInterpolator(self.stilde, self.grid)

    def phi_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.ones_like(x)
        return np.exp(self._log_phi(x))

    def stilde_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return self._s_spline(x)
        return np.exp(self._log_psi(x) - self._log_phi(x))

    def stilde_inverse(self, y, polish: int = 3) -> np.ndarray:
        """Monotone (PCHIP) inverse, then Newton steps on ``stilde_at`` kept inside the grid."""
        y = np.asarray(y, dtype=float)
        x = self._inverse(y)
        lo, hi = self.grid[0], self.grid[-1]
        for _ in range(polish):
            if self.degenerate:
                f, df = self._s_spline(x), self._s_spline(x, 1)
            else:
                f = self.stilde_at(x)
                df = f * (self._log_psi(x, 1) - self._log_phi(x, 1))
            step = np.where(df > 0, (f - y) / np.where(df > 0, df, 1.0), 0.0)
            x = np.clip(x - step, lo, hi)
        return x

    def index_of(self, x: float, tol: float = 1e-12) -> int | None:
        i = int(np.searchsorted(self.grid, x))
        for j in (i - 1, i):
            if 0 <= j < self.grid.size and abs(self.grid[j] - x) <= tol * max(1.0, abs(x)):
                return j
        return None


def _fd_rows(x, mu, sig, alpha):
    """Tridiagonal coefficients of the generator minus alpha at interior nodes."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    a2 = 0.5 * sig * sig
    lower = a2 * 2.0 / (hm * (hm + hp)) - mu * hp / (hm * (hm + hp))
    diag = -a2 * 2.0 / (hm * hp) + mu * (hp - hm) / (hm * hp) - alpha
    upper = a2 * 2.0 / (hp * (hm + hp)) + mu * hm / (hp * (hm + hp))
    return lower, diag, upper


def _solve_bvp(x, mu, sig, alpha, left, right):
    """Solve the ODE with boundary rows ``left``/``right``.

    Each boundary row is ``("dirichlet", value)`` or ``("robin", lam)`` meaning
    ``u' = lam * u`` (one-sided second-order difference, value scale set by
    the other end).
    """
    n = x.size
    ab = np.zeros((5, n))  # banded storage, 2 sub- and 2 super-diagonals

    def put(i, j, v):
        ab[2 + i - j, j] = v

    rhs = np.zeros(n)
    lo, di, up = _fd_rows(x, mu[1:-1], sig[1:-1], alpha)
    for k in range(1, n - 1):
        put(k, k - 1, lo[k - 1])
        put(k, k, di[k - 1])
        put(k, k + 1, up[k - 1])
    h1, h2 = x[1] - x[0], x[2] - x[1]
    if left[0] == "dirichlet":
        put(0, 0, 1.0)
        rhs[0] = left[1]
    else:
        put(0, 0, -(2 * h1 + h2) / (h1 * (h1 + h2)) - left[1])
        put(0, 1, (h1 + h2) / (h1 * h2))
        put(0, 2, -h1 / (h2 * (h1 + h2)))
    g1, g2 = x[-1] - x[-2], x[-2] - x[-3]
    if right[0] == "dirichlet":
        put(n - 1, n - 1, 1.0)
        rhs[-1] = right[1]
    else:
        put(n - 1, n - 1, (2 * g1 + g2) / (g1 * (g1 + g2)) - right[1])
        put(n - 1, n - 2, -(g1 + g2) / (g1 * g2))
        put(n - 1, n - 3, g1 / (g2 * (g1 + g2)))
    return solve_banded((2, 2), ab, rhs)


def harmonic_pair(
    diffusion: DiffusionSpec,
    alpha: float | None = None,
    grid: Sequence[float] | None = None,
    anchor: int | None = None,
    n: int = 2001,
) -> HarmonicPair:
    """Increasing/decreasing alpha-harmonic functions on a grid.

    Second-order finite differences on the (possibly non-uniform) grid. At
    the endpoints the closed-form pair pins the values when the spec has one;
    otherwise psi satisfies the frozen-coefficient growth condition
    ``u' = lambda_+ u`` at ``a`` and phi ``u' = lambda_- u`` at ``b``.

    With ``alpha == 0`` there is nothing to solve: the pair degenerates to
    ``(s, 1)`` and the returned object has ``degenerate=True``.
    """
    alpha = diffusion.alpha if alpha is None else float(alpha)
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha!r}")
    x = _check_grid(diffusion.uniform_grid(n) if grid is None else grid)
    c = x.size // 2 if anchor is None else int(anchor)
    if alpha == 0.0:
        s = scale_function(diffusion, x, c)
        return HarmonicPair(x, s, s.copy(), np.ones_like(s), s.copy(), float(x[c]), 0.0, degenerate=True)
    mu, sig = diffusion.coefficients(x)
    if np.any(sig[1:-1] <= 0) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sig)):
        raise ValidationError("vol must be positive and coefficients finite on the grid interior")
    if diffusion.exact_pair is not None and alpha == diffusion.alpha:
        ep, em = diffusion.exact_pair(np.array([x[0], x[-1]]))
        psi = _solve_bvp(x, mu, sig, alpha, ("dirichlet", ep[0]), ("dirichlet", ep[1]))
        phi = _solve_bvp(x, mu, sig, alpha, ("dirichlet", em[0]), ("dirichlet", em[1]))
    else:
        a2 = 0.5 * sig * sig
        lam_a = _exponents(a2[0] if a2[0] > 0 else a2[1], mu[0], alpha)[0]
        lam_b = _exponents(a2[-1] if a2[-1] > 0 else a2[-2], mu[-1], alpha)[1]
        psi = _solve_bvp(x, mu, sig, alpha, ("robin", lam_a), ("dirichlet", 1.0))
        phi = _solve_bvp(x, mu, sig, alpha, ("dirichlet", 1.0), ("robin", lam_b))
    hint = "refine the grid or shrink the interval"
    if not (np.all(psi > 0) and np.all(phi > 0)):
        raise NonMonotoneError(f"harmonic functions lost positivity; {hint}")
    psi, phi = psi / psi[c], phi / phi[c]
    if not (np.all(np.diff(psi) > 0) and np.all(np.diff(phi) < 0)):
        raise NonMonotoneError(f"psi/phi are not strictly monotone; {hint}")
    stilde = psi / phi
    s = scale_function(diffusion, x, c) if _integrable(diffusion, x) else None
    return HarmonicPair(x, s, psi, phi, stilde, float(x[c]), alpha)


def _integrable(diffusion, x) -> bool:
    try:
        scale_function(diffusion, x)
    except (NumericalError, NonMonotoneError):
        return False
    return True


def generator_residual(pair: HarmonicPair, diffusion: DiffusionSpec, which: str = "psi", trim: int = 3) -> np.ndarray:
    """``|0.5 vol^2 u'' + drift u' - alpha u| / |alpha u|`` at interior nodes.

    Derivatives come from a cubic spline through the tabulated values, so
    the residual measures the discretisation error of the solve rather than
    restating the difference equations.
    """
    u = pair.psi if which == "psi" else pair.phi
    x = pair.grid
    spl = CubicSpline(x, u)
    mu, sig = diffusion.coefficients(x)
    r = 0.5 * sig * sig * spl(x, 2) + mu * spl(x, 1) - pair.alpha * u
    return np.abs(r / (pair.alpha * u))[trim:-trim]


def hitting_decomposition(pair: HarmonicPair, l: float, r: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discounted exit probabilities through ``l`` (p1) and ``r`` (p2).

    Returns ``(x, p1, p2)`` with ``x`` the grid points strictly inside
    ``(l, r)`` plus the endpoints themselves.
    """
    a, b = pair.grid[0], pair.grid[-1]
    if not (a - 1e-12 <= l < r <= b + 1e-12):
        if l == r:
            raise ValidationError("degenerate interval: l == r")
        raise ValidationError(f"need {a} <= l < r <= {b}, got l={l!r}, r={r!r}")
    inside = (pair.grid > l) & (pair.grid < r)
    x = np.concatenate([[l], pair.grid[inside], [r]])
    psi, phi = _values(pair, x)
    den = psi[0] * phi[-1] - psi[-1] * phi[0]
    if den == 0:
        raise NumericalError("degenerate denominator in the hitting decomposition")
    p1 = (psi * phi[-1] - psi[-1] * phi) / den
    p2 = (psi[0] * phi - psi * phi[0]) / den
    return x, p1, p2


def _values(pair: HarmonicPair, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    psi = np.empty_like(x)
    phi = np.empty_like(x)
    for k, xv in enumerate(x):
        j = pair.index_of(xv)
        if j is not None:
            psi[k], phi[k] = pair.psi[j], pair.phi[j]
        elif pair.degenerate:
            psi[k], phi[k] = pair._s_spline(xv), 1.0
        else:
            psi[k], phi[k] = np.exp(pair._log_psi(xv)), np.exp(pair._log_phi(xv))
    return psi, phi


@dataclass(frozen=True, eq=False)
class TransformedPayoff:
    """Samples of ``(g / phi) o stilde^{-1}`` on knots ``y = stilde(x)``."""

    y: np.ndarray
    values: np.ndarray
    x: np.ndarray


def transform_payoff(g, pair: HarmonicPair, bounds: tuple[float, float] | None = None, n_knots: int | None = None) -> TransformedPayoff:
    """Move a payoff to the transformed scale.

    ``g`` is either a callable or an array of values on ``pair.grid``. By
    default the knots are the images of the grid points in ``[l, r]``; with
    ``n_knots`` they are equally spaced in ``y`` and mapped back through a
    monotone (PCHIP) inverse of ``stilde``, which requires a callable ``g``.
    """
    if not np.all(np.diff(pair.stilde) > 0):
        raise NonMonotoneError("stilde is not strictly increasing")
    l, r = (pair.grid[0], pair.grid[-1]) if bounds is None else bounds
    if n_knots is None:
        mask = (pair.grid >= l - 1e-12 * abs(l)) & (pair.grid <= r + 1e-12 * abs(r))
        x = pair.grid[mask]
        gv = np.asarray(g(x), dtype=float) if callable(g) else np.asarray(g, dtype=float)[mask]
        return TransformedPayoff(pair.stilde[mask], gv / pair.phi[mask], x)
    if not callable(g):
        raise ValidationError("resampling on uniform knots needs g as a callable")
    y0, y1 = pair.stilde_at(np.array([l, r]))
    y = np.linspace(y0, y1, int(n_knots))
    x = np.clip(pair.stilde_inverse(y), l, r)
    return TransformedPayoff(y, np.asarray(g(x), dtype=float) / pair.phi_at(x), x)


def chain_harmonic_pair(chain: ChainModel) -> tuple[np.ndarray, np.ndarray]:
    """Discrete analogues of (psi, phi) for a nearest-neighbour chain.

    Solves ``exp(-alpha dt) (P u)(i) = u(i)`` at every interior state by
    recursion: psi forward from ``psi[0] = 0, psi[1] = 1`` and phi backward
    from ``phi[-1] = 0, phi[-2] = 1``, each in its stable direction. The
    relation does not constrain the absorbing end states, so ``psi`` vanishes
    at the left end and ``phi`` at the right end.
    """
    P = chain.transition
    n = chain.n_states
    beta = chain.discount
    idx = np.arange(1, n - 1)
    pd, pm, pu = P[idx, idx - 1], P[idx, idx], P[idx, idx + 1]
    off = P.copy()
    off[idx, idx - 1] = off[idx, idx] = off[idx, idx + 1] = 0.0
    if np.any(off[idx] > 0) or np.any(pu <= 0) or np.any(pd <= 0):
        raise ValidationError("chain_harmonic_pair needs a nearest-neighbour chain with pu, pd > 0")
    psi = np.zeros(n)
    psi[1] = 1.0
    for k, i in enumerate(idx):
        psi[i + 1] = (psi[i] * (1.0 - beta * pm[k]) - beta * pd[k] * psi[i - 1]) / (beta * pu[k])
    phi = np.zeros(n)
    phi[-2] = 1.0
    for k in range(idx.size - 1, -1, -1):
        i = idx[k]
        phi[i - 1] = (phi[i] * (1.0 - beta * pm[k]) - beta * pu[k] * phi[i + 1]) / (beta * pd[k])
    return psi, phi
