"""Acceleration response, classical Fisher information and measurement noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .lattice import (RB87_MASS, LatticeConfig, MomentumDistribution, ground_bloch_state,
                      measure_populations, propagate)
from .optimizer import TargetState, UndefinedErrorSignal, percent_error

POPULATION_FLOOR = 1e-4
DEFAULT_DELTA_A = 0.01
DEFAULT_N_ATOMS = 1e4


@dataclass(frozen=True)
class CalibrationModel:
    """Magnetic-gradient to acceleration conversion for |F=2, m_F=2> 87Rb."""

    g_f: float = 0.5
    m_f: float = 2.0
    bohr_magneton: float = constants.physical_constants["Bohr magneton"][0]
    mass: float = RB87_MASS
    coil_coefficient: float = 0.71  # m/s^2 per ampere, measured
    coil_uncertainty: float = 0.16

    def __post_init__(self):
        if not (self.g_f > 0 and self.m_f > 0 and self.bohr_magneton > 0 and self.mass > 0):
            raise ValueError("calibration constants must be positive")


def effective_acceleration(gradient: float, cal: CalibrationModel = CalibrationModel()) -> float:
    """a_eff = G g_F m_F mu_B / m for a field gradient ``gradient`` in T/m."""
    if not math.isfinite(gradient):
        raise ValueError("gradient must be finite")
    return gradient * cal.g_f * cal.m_f * cal.bohr_magneton / cal.mass


def coil_acceleration(current: float, cal: CalibrationModel = CalibrationModel()) -> float:
    """Acceleration from the measured coil coefficient at ``current`` amperes."""
    return current * cal.coil_coefficient


@dataclass(frozen=True)
class NoiseModel:
    """Population-level stand-in for atom shot noise and imaging noise.

    ``n_atoms`` may be ``math.inf`` for the noiseless analytic limit of the
    multinomial draw.
    """

    n_atoms: float = DEFAULT_N_ATOMS
    offset: float = 0.0
    read_noise: float = 0.0
    seed: object = 0

    def __post_init__(self):
        if not self.n_atoms > 0:
            raise ValueError("n_atoms must be positive")
        if self.read_noise < 0 or self.offset < 0:
            raise ValueError("offset and read noise must be non-negative")


def noisy_measurement(P: MomentumDistribution, noise: NoiseModel, rng=None) -> MomentumDistribution:
    """Multinomial draw over (P_n, leak), then per-bin offset and Gaussian read noise, clamped at 0."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    p = np.asarray(P.populations, dtype=float)
    if math.isinf(noise.n_atoms):
        frac = p.copy()
    else:
        probs = np.append(p, max(P.leak, 0.0))
        probs = probs / probs.sum()
        counts = rng.multinomial(int(round(noise.n_atoms)), probs)
        frac = counts[:-1] / noise.n_atoms
    if noise.offset:
        frac = frac + noise.offset
    if noise.read_noise:
        frac = frac + rng.normal(0.0, noise.read_noise, size=frac.shape)
    frac = np.clip(frac, 0.0, None)
    total = frac.sum()
    if total > 1.0:
        # background can push the total past one; report relative populations then
        frac = frac / total
    n_atoms = P.n_atoms if math.isinf(noise.n_atoms) else noise.n_atoms
    return MomentumDistribution(frac, n_atoms=n_atoms, leak=max(0.0, 1.0 - frac.sum()))


@dataclass
class SensitivityResult:
    accel: float
    fisher: float
    delta_a: float
    step: float
    populations: np.ndarray
    shifted: np.ndarray
    n_atoms: float
    used_bins: np.ndarray = field(default=None)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.delta_a)


def fisher_from_populations(p_a, p_shifted, step: float, n_atoms: float,
                            floor: float = POPULATION_FLOOR):
    """Forward-difference classical Fisher information.

    B_n = ((P_n(a + da) - P_n(a)) / da)^2 and A_n = 1 / P_n(a) for bins with
    P_n(a) >= ``floor``; F = N_at * sum_n A_n B_n.  Returns ``(F, delta_a, mask)``
    with ``delta_a = inf`` when F = 0.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_shifted, dtype=float)
    mask = p_a >= floor
    slope = (p_b - p_a) / step
    F = float(n_atoms * np.sum(slope[mask] ** 2 / p_a[mask]))
    delta_a = 1.0 / math.sqrt(F) if F > 0 else math.inf
    return F, delta_a, mask


def run_with_signal(protocol, accel: float, lattice: LatticeConfig | None = None) -> MomentumDistribution:
    """Ground Bloch state through the whole protocol under acceleration ``accel``."""
    lattice = lattice or LatticeConfig()
    state = propagate(ground_bloch_state(lattice), protocol, accel, protocol.duration, lattice)
    return measure_populations(state, lattice.n_measure)


def classical_fisher_information(protocol, accel: float, delta_a: float = DEFAULT_DELTA_A,
                                 n_atoms: float = DEFAULT_N_ATOMS,
                                 lattice: LatticeConfig | None = None,
                                 floor: float = POPULATION_FLOOR) -> SensitivityResult:
    lattice = lattice or LatticeConfig()
    if not delta_a > 0:
        raise ValueError("delta_a must be positive")
    p_a = run_with_signal(protocol, accel, lattice).populations
    p_b = run_with_signal(protocol, accel + delta_a, lattice).populations
    F, da, mask = fisher_from_populations(p_a, p_b, delta_a, n_atoms, floor)
    return SensitivityResult(accel, F, da, delta_a, p_a, p_b, n_atoms, mask)


@dataclass
class ScanRow:
    accel: float
    distribution: MomentumDistribution | None
    ground_error: float = math.nan
    error: str | None = None


def acceleration_scan(protocol, a_values, lattice: LatticeConfig | None = None,
                      target: TargetState | None = None) -> list[ScanRow]:
    """One run per acceleration, in the given order; failures are recorded per row."""
    a_values = list(a_values)
    if not a_values:
        raise ValueError("acceleration list is empty")
    lattice = lattice or LatticeConfig()
    target = target or TargetState.ground(lattice.n_measure)
    rows = []
    for a in a_values:
        try:
            dist = run_with_signal(protocol, float(a), lattice)
        except Exception as exc:  # keep scanning
            rows.append(ScanRow(float(a), None, math.nan, f"{type(exc).__name__}: {exc}"))
            continue
        try:
            err = percent_error(dist, target)
        except UndefinedErrorSignal:
            err = math.nan
        rows.append(ScanRow(float(a), dist, err))
    return rows


@dataclass
class SensitivityRow:
    interrogation_time: float
    accel: float
    delta_a: float
    stderr: float
    fisher: float
    n_finite: int
    repetitions: int

    @property
    def infinite(self) -> bool:
        return math.isinf(self.delta_a)


def noisy_fisher_samples(p_a: MomentumDistribution, p_b: MomentumDistribution, step: float,
                         noise: NoiseModel, repetitions: int = 100, rng=None,
                         floor: float = POPULATION_FLOOR, n_atoms: float | None = None) -> np.ndarray:
    """Fisher information from ``repetitions`` independent noisy readouts of both points."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    if n_atoms is None:
        n_atoms = DEFAULT_N_ATOMS if math.isinf(noise.n_atoms) else noise.n_atoms
    out = np.empty(repetitions)
    for i in range(repetitions):
        a = noisy_measurement(p_a, noise, rng)
        b = noisy_measurement(p_b, noise, rng)
        out[i] = fisher_from_populations(a.populations, b.populations, step, n_atoms, floor)[0]
    return out


def noisy_sensitivity(p_a: MomentumDistribution, p_b: MomentumDistribution, step: float,
                      noise: NoiseModel, repetitions: int = 100, rng=None,
                      floor: float = POPULATION_FLOOR, n_atoms: float | None = None):
    """Mean and standard error of delta_a over repeated noisy readouts of both points.

    Returns ``(mean_delta_a, stderr, mean_fisher, n_finite)``; repetitions
    with F = 0 are excluded from the mean.
    """
    fishers = noisy_fisher_samples(p_a, p_b, step, noise, repetitions, rng, floor, n_atoms)
    finite = fishers[fishers > 0]
    if finite.size == 0:
        return math.inf, math.nan, float(fishers.mean()), 0
    deltas = 1.0 / np.sqrt(finite)
    stderr = float(deltas.std(ddof=1) / math.sqrt(deltas.size)) if deltas.size > 1 else math.nan
    return float(deltas.mean()), stderr, float(fishers.mean()), int(deltas.size)


def sensitivity_vs_interrogation(protocols, noise: NoiseModel | None = None,
                                 lattice: LatticeConfig | None = None,
                                 delta_a: float = DEFAULT_DELTA_A,
                                 n_atoms: float = DEFAULT_N_ATOMS,
                                 repetitions: int = 100) -> list[SensitivityRow]:
    """delta_a for each protocol at its bias acceleration.

    With ``noise`` each row is the mean over ``repetitions`` noisy readouts,
    drawn from an RNG seeded by ``(noise.seed, row index)``.
    """
    lattice = lattice or LatticeConfig()
    rows = []
    for i, protocol in enumerate(protocols):
        a0 = protocol.bias_acceleration
        p_a = run_with_signal(protocol, a0, lattice)
        p_b = run_with_signal(protocol, a0 + delta_a, lattice)
        if noise is None:
            F, da, _ = fisher_from_populations(p_a.populations, p_b.populations, delta_a, n_atoms)
            rows.append(SensitivityRow(protocol.duration, a0, da, 0.0, F, int(math.isfinite(da)), 1))
        else:
            rng = np.random.default_rng([_seed_int(noise.seed), i])
            scale = n_atoms if math.isinf(noise.n_atoms) else noise.n_atoms
            da, se, F, n_ok = noisy_sensitivity(p_a, p_b, delta_a, noise, repetitions, rng,
                                                n_atoms=scale)
            rows.append(SensitivityRow(protocol.duration, a0, da, se, F, n_ok, repetitions))
    return rows


def _seed_int(seed) -> int:
    if isinstance(seed, (tuple, list)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1)[0])
    return int(seed)


def noise_floor(noise: NoiseModel, n_bins: int = 5, delta_a: float = DEFAULT_DELTA_A,
                n_atoms: float = DEFAULT_N_ATOMS, repetitions: int = 100,
                floor: float = POPULATION_FLOOR):
    """delta_a from readouts with no atoms in the imaged window.

    Both finite-difference points are independent noise-only readouts, so
    any Fisher information is spurious; its mean delta_a is the offset a
    noise-limited measurement cannot beat.  Returns ``(mean, stderr)``.
    """
    empty = MomentumDistribution(np.zeros(n_bins), n_atoms=n_atoms, leak=1.0)
    rng = np.random.default_rng([_seed_int(noise.seed), 0xF100])
    da, se, _, _ = noisy_sensitivity(empty, empty, delta_a, noise, repetitions, rng,
                                     floor, n_atoms=n_atoms)
    return da, se


def calibrate_noise(target_floor: float, offset: float, n_atoms: float = DEFAULT_N_ATOMS,
                    delta_a: float = DEFAULT_DELTA_A, repetitions: int = 100, seed=0,
                    n_bins: int = 5, bracket=(1e-7, 1e-1)) -> NoiseModel:
    """Read noise sigma (at fixed ``offset``) whose noise floor equals ``target_floor``."""
    from scipy.optimize import brentq

    if not target_floor > 0:
        raise ValueError("target floor must be positive")

    def mismatch(log_sigma):
        nm = NoiseModel(n_atoms=n_atoms, offset=offset, read_noise=math.exp(log_sigma), seed=seed)
        da, _ = noise_floor(nm, n_bins, delta_a, n_atoms, repetitions)
        return math.log(da) - math.log(target_floor)

    lo, hi = (math.log(b) for b in bracket)
    if mismatch(lo) * mismatch(hi) > 0:
        raise ValueError("target floor not reachable within the read-noise bracket")
    sigma = math.exp(brentq(mismatch, lo, hi, xtol=1e-6))
    return NoiseModel(n_atoms=n_atoms, offset=offset, read_noise=sigma, seed=seed)
