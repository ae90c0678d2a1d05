"""Levenberg-Marquardt least squares and the interrogation-time scaling fit."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FitResult:
    params: np.ndarray
    stderr: np.ndarray
    mask: np.ndarray  # True where the parameter was free
    residual_norm: float
    initial_residual_norm: float
    converged: bool
    iterations: int
    reason: str
    covariance: np.ndarray = field(repr=False, default=None)


def numerical_jacobian(model, params, x, rel_step=1e-6):
    """Central differences with a step relative to each parameter."""
    params = np.asarray(params, dtype=float)
    cols = []
    for j in range(params.size):
        h = rel_step * max(abs(params[j]), 1e-12)
        up = params.copy()
        dn = params.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(model(up, x)) - np.asarray(model(dn, x))) / (2 * h))
    return np.column_stack(cols)


def levenberg_marquardt(model, x, y, p0, sigma=None, mask=None, jacobian=None,
                        xtol=1e-10, gtol=1e-12, max_iter=1000) -> FitResult:
    """Minimize sum(((y - model(p, x)) / sigma)^2) over the parameters where ``mask`` is True.

    ``jacobian(p, x)`` may be given; otherwise central differences are used.
    Damping follows Marquardt's scaling by diag(J^T J), raised tenfold on a
    rejected step and lowered tenfold on an accepted one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    sigma = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    mask = np.ones(p.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    free = np.flatnonzero(mask)
    if y.size < free.size:
        raise ValueError(f"{y.size} data points cannot constrain {free.size} free parameters")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("data must be finite")
    jac = jacobian or (lambda prm, xx: numerical_jacobian(model, prm, xx))

    def residuals(prm):
        return (y - np.asarray(model(prm, x), dtype=float)) / sigma

    r = residuals(p)
    cost = float(r @ r)
    initial_norm = math.sqrt(cost)
    lam = 1e-3
    reason = "max_iter"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = (jac(p, x) / sigma[:, None])[:, free]
        g = J.T @ r
        if np.linalg.norm(g, np.inf) < gtol:
            reason, converged = "gtol", True
            break
        A = J.T @ J
        scale = np.diag(A).copy()
        scale[scale <= 0] = 1.0
        step_taken = False
        while lam < 1e16:
            # damped step as an augmented least-squares problem; avoids squaring cond(J)
            aug = np.vstack([J, np.diag(np.sqrt(lam * scale))])
            rhs = np.concatenate([r, np.zeros(free.size)])
            try:
                delta = np.linalg.lstsq(aug, rhs, rcond=None)[0]
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p.copy()
            trial[free] += delta
            r_trial = residuals(trial)
            cost_trial = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else math.inf
            # near the minimum cost differences drop below rounding; the step is still valid
            if cost_trial <= cost * (1.0 + 1e-13):
                # per parameter, so a small-magnitude parameter still has to settle
                change = float(np.max(np.abs(delta) / (np.abs(p[free]) + xtol)))
                p, r, cost = trial, r_trial, cost_trial
                lam = max(lam / 10.0, 1e-12)
                step_taken = True
                break
            lam *= 10.0
        if not step_taken:
            reason, converged = "stalled", cost == 0.0 or np.linalg.norm(g) < 1e-8 * (1 + cost)
            break
        if change < xtol:
            reason, converged = "xtol", True
            break

    J = (jac(p, x) / sigma[:, None])[:, free]
    cov_free = np.full((free.size, free.size), np.nan)
    try:
        dof = y.size - free.size
        s2 = cost / dof if dof > 0 else math.nan
        cov_free = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        converged = False
        reason = "singular"
    cov = np.zeros((p.size, p.size))
    cov[np.ix_(free, free)] = cov_free
    stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(p, stderr, mask, math.sqrt(cost), initial_norm, converged, it, reason, cov)


def power_law(params, T):
    a, b, c = params
    return a * np.power(T, -b) + c


@dataclass
class ScalingFit:
    """delta_a(T_I) = a * T_I**(-b) + c."""

    a: float
    b: float
    c: float
    a_err: float
    b_err: float
    c_err: float
    c_fixed: bool
    residual_norm: float
    converged: bool
    provenance: dict = field(default_factory=dict)

    def __call__(self, T):
        return power_law((self.a, self.b, self.c), np.asarray(T, dtype=float))

    def to_dict(self) -> dict:
        return {
            "model": "a * T_I**(-b) + c",
            "a": self.a, "b": self.b, "c": self.c,
            "a_err": self.a_err, "b_err": self.b_err, "c_err": self.c_err,
            "c_fixed": self.c_fixed,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "provenance": self.provenance,
        }


def table_hash(T, delta_a) -> str:
    payload = json.dumps([[float(t), float(d)] for t, d in zip(T, delta_a)])
    return hashlib.sha256(payload.encode()).hexdigest()


def fit_scaling(T, delta_a, c_mode="free", sigma=None, b0: float = 2.0) -> ScalingFit:
    """Fit the power-law-plus-offset model to a (T_I, delta_a) table.

    ``c_mode`` is ``"free"`` or a number at which c is held fixed.
    """
    T = np.asarray(T, dtype=float)
    d = np.asarray(delta_a, dtype=float)
    c_fixed = not (isinstance(c_mode, str) and c_mode == "free")
    need = 3 if c_fixed else 4
    if T.size < need:
        raise ValueError(f"{'fixed' if c_fixed else 'free'}-c fit needs at least {need} rows")
    order = np.argsort(T)
    T, d = T[order], d[order]
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)[order]
    # fit in T / T_ref so the problem, and hence b, does not depend on the time unit
    t_ref = float(np.exp(np.mean(np.log(T))))
    x = T / t_ref
    c0 = float(c_mode) if c_fixed else 0.5 * float(d.min())
    a0 = (d[0] - c0) * x[0] ** b0
    if a0 <= 0:
        a0 = d[0] * x[0] ** b0
    mask = np.array([True, True, not c_fixed])
    res = levenberg_marquardt(power_law, x, d, [a0, b0, c0], sigma=sigma, mask=mask)
    a_n, b, c = res.params
    scale = t_ref ** b
    a = a_n * scale
    # a = a_n * t_ref**b: propagate the (a_n, b) covariance
    grad = np.array([scale, a * math.log(t_ref)])
    cov_ab = res.covariance[:2, :2]
    a_err = float(math.sqrt(max(grad @ cov_ab @ grad, 0.0))) if np.all(np.isfinite(cov_ab)) else math.nan
    return ScalingFit(
        float(a), float(b), float(c), a_err, float(res.stderr[1]), float(res.stderr[2]),
        c_fixed=c_fixed, residual_norm=res.residual_norm, converged=res.converged,
        provenance={"table_sha256": table_hash(T, d),
                    "c_mode": "free" if not c_fixed else float(c_mode),
                    "iterations": res.iterations, "stop": res.reason},
    )
