"""Shaken optical lattice in a truncated plane-wave basis.

States are expanded on momenta ``(2n + q) hbar k_L`` for ``n = -n_max..n_max``
with the quasimomentum ``q`` in units of ``hbar k_L``.  The lattice potential
is ``V0 cos^2(k_L x - phi/2)``; a phase ``phi`` advancing the retro-reflected
beam translates the standing wave by ``+phi / (2 k_L)``.

Propagation works in two exact frames.  A phase shift is a diagonal unitary,
``H(phi, q) = D(phi) H(0, q) D(phi)^dagger`` with ``D = diag(exp(-i n phi))``,
and a uniform acceleration (linear drift of ``q``) is absorbed into an extra
chirped phase ``theta(t) = 4 omega_r * int q dt`` entering as ``phi - theta``.  Every step therefore
reuses one eigendecomposition of the static lattice Hamiltonian.  The
stepper is the fourth-order commutator-free Magnus scheme with two
exponentials per step; each exponential is again a lattice Hamiltonian with
a slightly reduced coupling, handled to first order by a precomputed
Frechet derivative.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from . import stepper

HBAR = constants.hbar
PLANCK = constants.h
RB87_MASS = 86.909180527 * constants.atomic_mass

# Gauss-Legendre nodes and commutator-free Magnus weights
_SQRT3 = math.sqrt(3.0)
_C1 = 0.5 - _SQRT3 / 6.0
_C2 = 0.5 + _SQRT3 / 6.0
_A1 = (3.0 - 2.0 * _SQRT3) / 12.0
_A2 = (3.0 + 2.0 * _SQRT3) / 12.0

NORM_TOLERANCE = 1e-7


class PropagationError(RuntimeError):
    """Raised when the stepper loses normalization; refine ``dt``."""


@dataclass(frozen=True)
class LatticeConfig:
    """Physical and numerical parameters of the 1D lattice.

    ``depth`` is in recoil energies, ``dt`` in seconds.  ``n_max`` sets the
    dynamics basis (``2 n_max + 1`` plane waves) and ``n_measure`` the
    number of momentum orders kept on each side when populations are read out.
    """

    wavelength: float = 852e-9
    depth: float = 14.0
    mass: float = RB87_MASS
    n_max: int = 8
    dt: float = 1e-7
    n_measure: int = 2

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not self.depth >= 0:
            raise ValueError("depth must be non-negative")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (int(self.n_max) >= int(self.n_measure) >= 1):
            raise ValueError("require n_max >= n_measure >= 1")

    @property
    def k_lattice(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def recoil_energy(self) -> float:
        return recoil_energy(self)

    @property
    def recoil_frequency(self) -> float:
        """E_r / h in hertz."""
        return self.recoil_energy / PLANCK

    @property
    def omega_recoil(self) -> float:
        return self.recoil_energy / HBAR

    @property
    def dim(self) -> int:
        return 2 * self.n_max + 1

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    def drift_rate(self, accel: float) -> float:
        """Quasimomentum drift dq/dt (hbar k_L per second) under ``accel``."""
        return -self.mass * accel / (HBAR * self.k_lattice)


@dataclass(frozen=True)
class QuantumState:
    amplitudes: np.ndarray
    q: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.size % 2 != 1:
            raise ValueError("amplitude vector must have odd length 2*n_max + 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_max(self) -> int:
        return (self.amplitudes.size - 1) // 2

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class MomentumDistribution:
    """Populations of the orders ``-N..N`` plus the probability outside them."""

    populations: np.ndarray
    n_atoms: float = 1.0
    leak: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or p.size % 2 != 1:
            raise ValueError("population vector must have odd length 2N + 1")
        if np.any(p < 0):
            raise ValueError("populations must be non-negative")
        if p.sum() > 1.0 + 1e-12:
            raise ValueError(f"populations sum to {p.sum():.15g} > 1")
        if self.n_atoms < 0:
            raise ValueError("atom number must be non-negative")
        object.__setattr__(self, "populations", p)

    @property
    def N(self) -> int:
        return (self.populations.size - 1) // 2

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.populations, dtype=dtype)


def recoil_energy(config: LatticeConfig) -> float:
    """Recoil energy hbar^2 k_L^2 / 2m in joules."""
    k = config.k_lattice
    return HBAR**2 * k**2 / (2.0 * config.mass)


def _hamiltonian_er(depth: float, n_max: int, phi: float = 0.0, q: float = 0.0) -> np.ndarray:
    n = np.arange(-n_max, n_max + 1)
    H = np.diag((2.0 * n + q) ** 2 + depth / 2.0).astype(np.complex128)
    coupling = depth / 4.0 * np.ones(2 * n_max)
    H += np.diag(coupling * np.exp(1j * phi), 1)
    H += np.diag(coupling * np.exp(-1j * phi), -1)
    return H


def build_hamiltonian(config: LatticeConfig, phi: float = 0.0, q: float = 0.0) -> np.ndarray:
    """Lattice Hamiltonian (joules) at lattice phase ``phi`` and quasimomentum ``q``."""
    if not math.isfinite(phi) or not math.isfinite(q):
        raise ValueError("phase and quasimomentum must be finite")
    return config.recoil_energy * _hamiltonian_er(config.depth, config.n_max, phi, q)


def ground_bloch_state(config: LatticeConfig, q: float = 0.0) -> QuantumState:
    """Lowest band Bloch state at quasimomentum ``q``, with ``c_0`` real positive."""
    try:
        _, vecs = np.linalg.eigh(_hamiltonian_er(config.depth, config.n_max, 0.0, q))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - Hermitian input
        raise RuntimeError("diagonalization of the lattice Hamiltonian failed") from exc
    c = vecs[:, 0].astype(np.complex128)
    c0 = c[config.n_max]
    if abs(c0) > 0:
        c *= abs(c0) / c0
    c /= np.linalg.norm(c)
    return QuantumState(c, q=float(q), t=0.0)


def band_energies(config: LatticeConfig, q: float = 0.0, n_bands: int = 3) -> np.ndarray:
    """Lowest band energies at ``q`` in units of E_r."""
    return np.linalg.eigvalsh(_hamiltonian_er(config.depth, config.n_max, 0.0, q))[:n_bands]


@functools.lru_cache(maxsize=32)
def _half_step_operators(depth: float, n_max: int, tau: float):
    """Propagator exp(-i tau H0) and its derivative in the coupling scale.

    ``tau`` is dimensionless (time times omega_r).  Returns ``(U, M)`` with
    ``exp(-i tau (H0 + eps C0)) = U + eps M + O(eps^2)``.
    """
    H0 = _hamiltonian_er(depth, n_max).real
    C0 = np.diag(depth / 4.0 * np.ones(2 * n_max), 1)
    C0 = C0 + C0.T
    energies, vecs = np.linalg.eigh(H0)
    phases = np.exp(-1j * tau * energies)
    c_eig = vecs.T @ C0 @ vecs
    de = energies[:, None] - energies[None, :]
    dp = phases[:, None] - phases[None, :]
    degenerate = np.abs(de) < 1e-12
    divided = np.where(degenerate, -1j * tau * phases[:, None], dp / np.where(degenerate, 1.0, de))
    U = (vecs * phases) @ vecs.T
    M = vecs @ (c_eig * divided) @ vecs.T
    U = np.ascontiguousarray(U, dtype=np.complex128)
    M = np.ascontiguousarray(M, dtype=np.complex128)
    U.setflags(write=False)
    M.setflags(write=False)
    return U, M


def _drive_sequence(phase_1: np.ndarray, phase_2: np.ndarray) -> np.ndarray:
    """Interleave the two Magnus exponentials of every step, first-applied first.

    ``phase_k`` is the effective lattice phase at the two Gauss nodes.
    """
    e1 = np.exp(1j * phase_1)
    e2 = np.exp(1j * phase_2)
    z = np.empty(2 * phase_1.size, dtype=np.complex128)
    z[0::2] = 2.0 * (_A2 * e1 + _A1 * e2)
    z[1::2] = 2.0 * (_A1 * e1 + _A2 * e2)
    return z


def propagate(state: QuantumState, protocol, accel: float, t_span: float,
              config: LatticeConfig) -> QuantumState:
    """Evolve ``state`` for ``t_span`` seconds under ``protocol`` and ``accel``.

    The shaking phase is read from ``protocol`` at absolute times
    ``state.t .. state.t + t_span`` (zero outside the protocol); ``protocol``
    may be ``None`` for an unshaken lattice.  The quasimomentum drifts as
    ``q(t) = q0 - m a t / (hbar k_L)``.
    """
    if t_span < 0:
        raise ValueError("t_span must be non-negative")
    if state.amplitudes.size != config.dim:
        raise ValueError(
            f"state has {state.amplitudes.size} amplitudes, config expects {config.dim}")
    if abs(state.norm - 1.0) > NORM_TOLERANCE:
        raise ValueError("input state is not normalized")
    if t_span == 0:
        return QuantumState(state.amplitudes.copy(), state.q, state.t)

    n_steps = max(1, math.ceil(t_span / config.dt - 1e-9))
    h = t_span / n_steps
    omega = config.omega_recoil
    drift = config.drift_rate(accel)
    q0 = state.q

    def frame_phase(tau):
        return 4.0 * omega * (q0 * tau + 0.5 * drift * tau * tau)

    tau = np.arange(n_steps) * h
    tau_1 = tau + _C1 * h
    tau_2 = tau + _C2 * h
    if protocol is None:
        shake_1 = shake_2 = 0.0
    else:
        shake_1 = protocol.phase(state.t + tau_1)
        shake_2 = protocol.phase(state.t + tau_2)
    z = _drive_sequence(shake_1 - frame_phase(tau_1), shake_2 - frame_phase(tau_2))

    U, M = _half_step_operators(float(config.depth), int(config.n_max), 0.5 * h * omega)
    psi = stepper.evolve(state.amplitudes, U, M, z)
    psi = psi * np.exp(-1j * config.orders * frame_phase(t_span))

    norm = float(np.vdot(psi, psi).real)
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise PropagationError(
            f"norm drifted to {norm:.12f} over {n_steps} steps of {h:.3e} s; refine dt")
    return QuantumState(psi, q=q0 + drift * t_span, t=state.t + t_span)


def measure_populations(state: QuantumState, N: int, n_atoms: float = 1.0) -> MomentumDistribution:
    """Populations of orders ``-N..N``, not renormalized; the rest is reported as leak."""
    nmax = state.n_max
    if N > nmax:
        raise ValueError(f"measurement truncation {N} exceeds basis n_max {nmax}")
    p = state.populations()
    kept = p[nmax - N: nmax + N + 1].copy()
    leak = float(p.sum() - kept.sum())
    total = kept.sum()
    if total > 1.0:
        # unitary roundoff can push the kept mass a few ulp past one
        kept /= total
    return MomentumDistribution(kept, n_atoms=n_atoms, leak=max(leak, 0.0))


def ensemble_populations(config: LatticeConfig, protocol, accel: float, q_spread: float,
                         n_samples: int = 32, seed: int = 0, t_span: float | None = None,
                         return_samples: bool = False):
    """Populations averaged over a Gaussian spread of initial quasimomenta.

    Each sample starts in its own ground Bloch state and is propagated
    independently through ``protocol`` (its full duration unless ``t_span``).
    """
    if q_spread < 0:
        raise ValueError("q_spread must be non-negative")
    if t_span is None:
        t_span = protocol.duration if protocol is not None else 0.0
    if q_spread == 0:
        q_values = np.zeros(1)
    else:
        q_values = np.random.default_rng(seed).normal(0.0, q_spread, size=int(n_samples))
    samples = []
    for q0 in q_values:
        final = propagate(ground_bloch_state(config, q0), protocol, accel, t_span, config)
        samples.append(measure_populations(final, config.n_measure))
    pops = np.mean([s.populations for s in samples], axis=0)
    leak = float(np.mean([s.leak for s in samples]))
    result = MomentumDistribution(pops, leak=leak, meta={"q_samples": q_values})
    if return_samples:
        return result, samples
    return result
