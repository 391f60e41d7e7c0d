"""CSV exports of node-level tables (one row per (k, state) or per grid point)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diffusion_scale import HarmonicPair
from .doob_meyer import ApproxReport, Decomposition
from .majorant_smoothfit import SmoothFitReport
from .snell_engine import SnellSolution


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def solution_rows(sol: SnellSolution):
    states = sol.chain.states
    N = sol.horizon
    for k in range(N + 1):
        for i, x in enumerate(states):
            cont = sol.cont[k, i] if k < N else np.nan
            yield k, x, sol.S[k, i], sol.payoff.g[i], cont, bool(sol.stop_region[k, i])


SOLUTION_HEADER = ("k", "state", "S", "G", "cont", "stop")
DECOMPOSITION_HEADER = ("k", "state", "dA", "dD", "dDplus", "dDminus", "mu")
APPROX_HEADER = ("t", "level", "A_mean", "An_mean", "error", "cesaro")
PAIR_HEADER = ("x", "s", "psi", "phi", "stilde")
VALUE_HEADER = ("x", "g", "V", "stop")
SMOOTHFIT_HEADER = ("boundary", "h", "left_deriv", "right_deriv", "gap")


def decomposition_rows(dec: Decomposition):
    states = dec.chain.states
    for k in range(dec.dA.shape[0]):
        for i, x in enumerate(states):
            yield k, x, dec.dA[k, i], dec.dD[k, i], dec.dDplus[k, i], dec.dDminus[k, i], dec.mu[k, i]


def approx_rows(rep: ApproxReport):
    for t in rep.probe_times:
        for L, n in enumerate(rep.levels):
            yield t, n, rep.A_mean[t], rep.An_at[t][L], rep.errors[t][L], rep.cesaro[t][L]


def pair_rows(pair: HarmonicPair):
    s = pair.s if pair.s is not None else np.full(pair.grid.shape, np.nan)
    return zip(pair.grid, s, pair.psi, pair.phi, pair.stilde)


def value_rows(x, g, V, tol: float = 1e-10):
    x, g, V = (np.asarray(a, dtype=float) for a in (x, g, V))
    return zip(x, g, V, (V - g) <= tol)


def smoothfit_rows(rep: SmoothFitReport):
    for r in rep.rows():
        yield r["boundary"], r["h"], r["left_deriv"], r["right_deriv"], r["gap"]
