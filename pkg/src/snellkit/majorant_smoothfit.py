"""Smallest nonnegative concave majorant, V = phi * (W o stilde), regions and smooth fit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diffusion_scale import DiffusionSpec, HarmonicPair, harmonic_pair, transform_payoff
from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``(knots, values)``."""

    knots: np.ndarray
    values: np.ndarray
    contact: np.ndarray

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(y < lo - slack) or np.any(y > hi + slack):
            raise ValidationError(f"argument outside the knot range [{lo}, {hi}]")
        return np.interp(y, self.knots, self.values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)


def _upper_hull(y: np.ndarray, v: np.ndarray) -> list[int]:
    hull: list[int] = []
    for k in range(y.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j when it lies on or below the chord from i to k
            cross = (y[j] - y[i]) * (v[k] - v[i]) - (v[j] - v[i]) * (y[k] - y[i])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def concave_majorant(knots: Sequence[float], values: Sequence[float], tol: float | None = None) -> PiecewiseLinear:
    """Smallest concave majorant of ``max(values, 0)`` on the sampled knots.

    One left-to-right sweep of the monotone-chain upper hull. ``contact``
    marks knots where the majorant touches the floored samples within
    ``tol`` (default ``1e-12`` relative to the largest sample).
    """
    y = np.asarray(knots, dtype=float)
    v = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size < 2 or v.shape != y.shape:
        raise ValidationError("need at least 2 knots with one value each")
    if not np.all(np.diff(y) > 0):
        raise ValidationError("knots must be strictly increasing")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
        raise ValidationError("knots and values must be finite")
    floor = np.maximum(v, 0.0)
    hull = _upper_hull(y, floor)
    W = np.interp(y, y[hull], floor[hull])
    W[hull] = floor[hull]
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(floor)))
    contact = W - floor <= tol
    return PiecewiseLinear(y, W, contact)


def value_from_majorant(W: PiecewiseLinear, pair: HarmonicPair, x: Sequence[float] | None = None) -> np.ndarray:
    """``V(x) = phi(x) W(stilde(x))``.

    Grid points of ``pair`` use the tabulated ``phi`` and ``stilde``; other
    points go through interpolants. Raises if ``x`` maps outside the knots.
    """
    if x is None:
        lo, hi = W.knots[0], W.knots[-1]
        mask = (pair.stilde >= lo) & (pair.stilde <= hi)
        return pair.phi[mask] * W(pair.stilde[mask])
    x = np.asarray(x, dtype=float)
    phi = np.empty_like(x)
    st = np.empty_like(x)
    for k, xv in enumerate(x.ravel()):
        j = pair.index_of(xv)
        if j is not None:
            phi.flat[k], st.flat[k] = pair.phi[j], pair.stilde[j]
        else:
            if not pair.grid[0] <= xv <= pair.grid[-1]:
                raise ValidationError(f"x = {xv!r} lies outside [{pair.grid[0]}, {pair.grid[-1]}]")
            phi.flat[k], st.flat[k] = pair.phi_at(xv), pair.stilde_at(xv)
    try:
        return phi * W(st)
    except ValidationError as exc:
        raise ValidationError(f"x outside the interval covered by W: {exc}") from None


@dataclass(frozen=True, eq=False)
class MajorantSolution:
    pair: HarmonicPair
    W: PiecewiseLinear
    x: np.ndarray
    g: np.ndarray
    V: np.ndarray


def solve_by_majorant(
    diffusion: DiffusionSpec,
    g: Callable[[np.ndarray], np.ndarray],
    grid: Sequence[float],
    alpha: float | None = None,
    anchor: int | None = None,
) -> MajorantSolution:
    """Perpetual value on ``grid`` by the concave-majorant construction."""
    pair = harmonic_pair(diffusion, alpha, grid, anchor)
    tp = transform_payoff(g, pair)
    W = concave_majorant(tp.y, tp.values)
    V = pair.phi * W(pair.stilde)
    return MajorantSolution(pair, W, pair.grid, np.asarray(g(pair.grid), dtype=float), V)


def _check_common(V, g, x=None):
    V = np.asarray(V, dtype=float)
    g = np.asarray(g, dtype=float)
    if V.shape != g.shape or V.ndim != 1:
        raise ValidationError("V and g must be 1-D arrays on a common grid")
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.shape != V.shape:
            raise ValidationError("x must match V and g")
    return V, g, x


def stopping_region(x: Sequence[float], V: Sequence[float], g: Sequence[float], tol: float = 1e-10) -> list[tuple[float, float]]:
    """Maximal grid intervals ``[x_lo, x_hi]`` on which ``V - g <= tol``."""
    V, g, x = _check_common(V, g, x)
    stop = V - g <= tol
    out = []
    k = 0
    while k < stop.size:
        if stop[k]:
            j = k
            while j + 1 < stop.size and stop[j + 1]:
                j += 1
            out.append((float(x[k]), float(x[j])))
            k = j + 1
        else:
            k += 1
    return out


def estimate_boundary(x: Sequence[float], V: Sequence[float], g: Sequence[float], tol: float = 1e-10) -> np.ndarray:
    """Boundary points between stopping and continuation nodes.

    Each switch between adjacent nodes is refined by the linear zero
    crossing of ``V - g - tol`` inside that cell.
    """
    V, g, x = _check_common(V, g, x)
    e = V - g - tol
    stop = e <= 0
    pts = []
    for k in np.nonzero(stop[:-1] != stop[1:])[0]:
        e0, e1 = e[k], e[k + 1]
        w = e0 / (e0 - e1) if e0 != e1 else 0.0
        pts.append(x[k] + min(max(w, 0.0), 1.0) * (x[k + 1] - x[k]))
    return np.array(pts)


@dataclass(frozen=True, eq=False)
class SmoothFitReport:
    """One-sided difference quotients of V at each boundary point.

    Arrays indexed ``[boundary, rung]`` with the ladder ``h`` strictly
    decreasing. ``*_extrapolated`` are linear (first-order Richardson)
    extrapolations of the last two rungs to ``h = 0``.
    """

    boundary_points: np.ndarray
    anchors: np.ndarray
    h: np.ndarray
    left_deriv: np.ndarray
    right_deriv: np.ndarray
    gap: np.ndarray
    left_extrapolated: np.ndarray
    right_extrapolated: np.ndarray
    gap_extrapolated: np.ndarray
    max_second_difference: float

    def rows(self) -> list[dict]:
        out = []
        for b in range(self.boundary_points.size):
            for r in range(self.h.size):
                out.append({
                    "boundary": float(self.boundary_points[b]), "h": float(self.h[r]),
                    "left_deriv": float(self.left_deriv[b, r]), "right_deriv": float(self.right_deriv[b, r]),
                    "gap": float(self.gap[b, r]),
                })
        return out


def smooth_fit_check(
    x: Sequence[float],
    V: Sequence[float],
    boundary_points: Sequence[float],
    h_ladder: Sequence[float] | None = None,
    g: Sequence[float] | None = None,
) -> SmoothFitReport:
    """Difference quotients of ``V`` on either side of each boundary point.

    Quotients are anchored at the grid node nearest to the boundary and use
    the nodes ``m`` cells away on each side, ``m = round(h / local spacing)``.
    The default ladder is ``{4h0, 2h0, h0}`` with ``h0`` the spacing at the
    anchor. ``g`` (optional) lets the report measure the largest second
    difference of ``V`` away from the boundaries.
    """
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    if x.ndim != 1 or x.shape != V.shape or x.size < 3 or not np.all(np.diff(x) > 0):
        raise ValidationError("x must be strictly increasing and match V")
    bps = np.atleast_1d(np.asarray(boundary_points, dtype=float))
    anchors = np.array([int(np.argmin(np.abs(x - b))) for b in bps], dtype=int)
    for b, j in zip(bps, anchors):
        if not x[0] < b < x[-1] or j in (0, x.size - 1):
            raise ValidationError(f"boundary point {b!r} is not interior to the grid")
    if h_ladder is None:
        h0 = min(max(x[j + 1] - x[j], x[j] - x[j - 1]) for j in anchors) if anchors.size else 1.0
        h_ladder = [4 * h0, 2 * h0, h0]
    h = np.asarray(h_ladder, dtype=float)
    if h.size < 2 or not np.all(np.diff(h) < 0):
        raise ValidationError("h ladder must have >= 2 strictly decreasing steps")
    nb, nh = bps.size, h.size
    left = np.empty((nb, nh))
    right = np.empty((nb, nh))
    hl = np.empty((nb, nh))
    hr = np.empty((nb, nh))
    for b, j in enumerate(anchors):
        dx = 0.5 * (x[min(j + 1, x.size - 1)] - x[max(j - 1, 0)])
        for r, step in enumerate(h):
            m = int(round(step / dx))
            if m < 1:
                raise ValidationError(f"h = {step!r} is below the grid resolution {dx:.3g}")
            if j - m < 0 or j + m >= x.size:
                raise ValidationError(f"h = {step!r} reaches past the grid edge at boundary {bps[b]!r}")
            hl[b, r] = x[j] - x[j - m]
            hr[b, r] = x[j + m] - x[j]
            left[b, r] = (V[j] - V[j - m]) / hl[b, r]
            right[b, r] = (V[j + m] - V[j]) / hr[b, r]
    gap = np.abs(right - left)

    def extrap(q, hh):
        h1, h2 = hh[:, -2], hh[:, -1]
        return (h1 * q[:, -1] - h2 * q[:, -2]) / (h1 - h2)

    lx, rx = extrap(left, hl), extrap(right, hr)
    second = 0.0
    if g is not None:
        d2 = np.abs(np.diff(np.diff(V) / np.diff(x)) / (0.5 * (x[2:] - x[:-2])))
        far = np.ones(d2.size, dtype=bool)
        for j in anchors:
            far[max(j - 3, 0):j + 2] = False
        second = float(d2[far].max(initial=0.0))
    return SmoothFitReport(bps, anchors, h, left, right, gap, lx, rx, np.abs(rx - lx), second)



def truncation_sensitivity(
    diffusion: DiffusionSpec,
    g: Callable[[np.ndarray], np.ndarray],
    n: int,
    probes: Sequence[float],
    geometric: bool | None = None,
) -> float:
    """Largest change of V at ``probes`` when the right end ``b`` is doubled.

    The doubled interval keeps the point density of the original grid.
    """
    a, b = diffusion.interval
    geometric = a > 0 if geometric is None else geometric
    if geometric:
        x1 = np.geomspace(a, b, n)
        n2 = int(np.ceil((n - 1) * np.log(2 * b / a) / np.log(b / a))) + 1
        x2 = np.geomspace(a, 2 * b, n2)
    else:
        x1 = np.linspace(a, b, n)
        n2 = int(np.ceil((n - 1) * (2 * b - a) / (b - a))) + 1
        x2 = np.linspace(a, 2 * b, n2)
    wide = DiffusionSpec((a, 2 * b), diffusion.drift, diffusion.vol, diffusion.alpha, diffusion.name, None)
    base = DiffusionSpec((a, b), diffusion.drift, diffusion.vol, diffusion.alpha, diffusion.name, None)
    s1 = solve_by_majorant(base, g, x1)
    s2 = solve_by_majorant(wide, g, x2)
    p = np.asarray(probes, dtype=float)
    return float(np.max(np.abs(value_from_majorant(s1.W, s1.pair, p) - value_from_majorant(s2.W, s2.pair, p))))
