"""Nelder-Mead downhill simplex minimization.

Standard moves (reflection 1, expansion 2, contraction 0.5, shrink 0.5)
in the ordering of Lagarias et al. (1998).  The search stops when the
simplex diameter measured from the best vertex drops below ``xatol``, when
the spread of vertex values drops below ``fatol``, or when ``max_evals``
objective calls have been spent, whichever comes first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateSimplexError(ValueError):
    pass


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    reason: str
    trace: list = field(default_factory=list)  # best value after each iteration


def _safe(f, x):
    value = f(x)
    value = float(value)
    return math.inf if math.isnan(value) else value


def nelder_mead(objective, initial_simplex, *, xatol=1e-4, fatol=0.05, max_evals=500,
                reflect=1.0, expand=2.0, contract=0.5, shrink=0.5,
                initial_values=None) -> NelderMeadResult:
    """Minimize ``objective`` from ``initial_simplex`` (d + 1 vertices in d dimensions).

    NaN objective values are treated as +inf so that the vertex is never
    accepted.  ``initial_values`` may supply already known objective values
    for the initial vertices (``None`` entries are evaluated).
    """
    sim = np.array(initial_simplex, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] + 1:
        raise DegenerateSimplexError(
            f"need d + 1 vertices of dimension d, got array of shape {sim.shape}")
    d = sim.shape[1]
    edges = sim[1:] - sim[0]
    if np.linalg.matrix_rank(edges) < d:
        raise DegenerateSimplexError("initial simplex vertices are affinely dependent")

    nfev = 0
    fsim = np.empty(d + 1)
    for i in range(d + 1):
        known = None if initial_values is None else initial_values[i]
        if known is None:
            fsim[i] = _safe(objective, sim[i])
            nfev += 1
        else:
            fsim[i] = float(known)

    trace = []
    nit = 0
    reason = "max_evals"
    while True:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        trace.append(float(fsim[0]))

        spread = fsim[-1] - fsim[0] if np.all(np.isfinite(fsim)) else math.inf
        if np.all(fsim == fsim[0]):
            spread = 0.0
        if spread <= fatol:
            reason = "fatol"
            break
        if np.max(np.abs(sim[1:] - sim[0])) <= xatol:
            reason = "xatol"
            break
        if nfev >= max_evals:
            reason = "max_evals"
            break

        nit += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + reflect * (centroid - sim[-1])
        fr = _safe(objective, xr)
        nfev += 1

        if fr < fsim[0]:
            xe = centroid + reflect * expand * (centroid - sim[-1])
            fe = _safe(objective, xe)
            nfev += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue

        if fr < fsim[-1]:
            xc = centroid + contract * (xr - centroid)
            fc = _safe(objective, xc)
            nfev += 1
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
                continue
        else:
            xc = centroid + contract * (sim[-1] - centroid)
            fc = _safe(objective, xc)
            nfev += 1
            if fc < fsim[-1]:
                sim[-1], fsim[-1] = xc, fc
                continue

        for i in range(1, d + 1):
            sim[i] = sim[0] + shrink * (sim[i] - sim[0])
            fsim[i] = _safe(objective, sim[i])
            nfev += 1

    best = int(np.argmin(fsim))
    return NelderMeadResult(sim[best].copy(), float(fsim[best]), nfev, nit, reason, trace)
