"""Closed-loop waveform learning: percent error, dCRAB super-iterations, interferometer stages."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import (LatticeConfig, MomentumDistribution, QuantumState, ground_bloch_state,
                      measure_populations, propagate)
from .neldermead import nelder_mead
from .protocol import SEGMENT_DURATION, ShakingProtocol, WaveformSegment, build_interferometer


class UndefinedErrorSignal(ArithmeticError):
    """Percent error requested for an all-zero population vector."""


class EvaluatorError(RuntimeError):
    def __init__(self, message, segment):
        super().__init__(message)
        self.segment = segment


@dataclass(frozen=True)
class TargetState:
    populations: tuple
    label: str = "custom"

    def __post_init__(self):
        p = tuple(float(v) for v in self.populations)
        if len(p) % 2 != 1:
            raise ValueError("target must have odd length 2N + 1")
        if any(v < 0 for v in p):
            raise ValueError("target populations must be non-negative")
        if not any(v > 0 for v in p):
            raise ValueError("target vector must be nonzero")
        object.__setattr__(self, "populations", p)

    @classmethod
    def split(cls, N: int = 2) -> "TargetState":
        p = np.zeros(2 * N + 1)
        p[N - 1] = p[N + 1] = 0.5
        return cls(tuple(p), "split")

    @classmethod
    def ground(cls, N: int = 2) -> "TargetState":
        p = np.zeros(2 * N + 1)
        p[N] = 1.0
        return cls(tuple(p), "ground")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.populations, dtype=dtype)


def percent_error(P, P_des) -> float:
    """E = (1 - cos angle(P, P_des)) * 100."""
    p = np.asarray(P, dtype=float)
    q = np.asarray(P_des, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"population vectors differ in shape: {p.shape} vs {q.shape}")
    norm_p = np.linalg.norm(p)
    norm_q = np.linalg.norm(q)
    if norm_p == 0 or norm_q == 0:
        raise UndefinedErrorSignal("percent error is undefined for a zero population vector")
    cos = float(p @ q) / (norm_p * norm_q)
    return max(0.0, (1.0 - cos) * 100.0)


@dataclass(frozen=True)
class OptimizerConfig:
    band: tuple = (18e3, 30e3)
    n_freq: int = 5
    max_super_iterations: int = 6
    xatol: float = 1e-4
    fatol: float = 0.05
    max_evals: int = 500
    seed: int = 0
    bias_acceleration: float = 0.0
    initial_amplitude: float = 0.05
    stop_error: float = 1.0
    max_attempts: int = 3
    segment_duration: float = SEGMENT_DURATION
    share_propagation: bool = False
    noise: object = None  # sensing.NoiseModel for closed-loop emulation

    def __post_init__(self):
        lo, hi = (float(v) for v in self.band)
        object.__setattr__(self, "band", (lo, hi))
        if not 0 < lo < hi:
            raise ValueError("frequency band needs 0 < f_lo < f_hi")
        if self.n_freq < 1 or self.max_super_iterations < 1 or self.max_attempts < 1:
            raise ValueError("n_freq, max_super_iterations and max_attempts must be >= 1")
        if not (self.xatol > 0 and self.fatol > 0 and self.max_evals > 0):
            raise ValueError("Nelder-Mead tolerances must be positive")
        if not self.initial_amplitude > 0:
            raise ValueError("initial_amplitude must be positive")


@dataclass
class Evaluation:
    stage: str
    super_iteration: int
    index: int
    frequencies: tuple
    coefficients: tuple
    error: float
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "super_iteration": self.super_iteration,
            "evaluation": self.index,
            "frequencies": list(self.frequencies),
            "coefficients": list(self.coefficients),
            "error": self.error,
        }


@dataclass
class OptimizationRecord:
    stage: str
    seed: object
    target: TargetState
    evaluations: list = field(default_factory=list)
    best_segment: WaveformSegment | None = None
    best_error: float = math.inf
    history: list = field(default_factory=list)
    converged: bool = False

    def write_log(self, fh) -> None:
        """Append one JSON line per evaluation."""
        for ev in self.evaluations:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


class SegmentEvaluator:
    """Maps a candidate segment to the populations at the end of that segment.

    The state entering the segment (after all frozen prior segments) is
    computed once; each call only propagates through the candidate.
    """

    def __init__(self, lattice: LatticeConfig, prefix: ShakingProtocol, accel: float,
                 entering: QuantumState | None = None, noise=None, label: str = "propagate"):
        self.lattice = lattice
        self.prefix = prefix
        self.accel = accel
        self.label = label
        self.noise = noise
        self._draws = 0
        if entering is None:
            entering = propagate(ground_bloch_state(lattice), prefix, accel, prefix.duration, lattice)
        self.entering = entering

    def final_state(self, segment: WaveformSegment) -> QuantumState:
        protocol = self.prefix.with_segment(segment, self.label)
        return propagate(self.entering, protocol, self.accel, segment.duration, self.lattice)

    def __call__(self, segment: WaveformSegment) -> MomentumDistribution:
        dist = measure_populations(self.final_state(segment), self.lattice.n_measure)
        if self.noise is not None:
            from .sensing import noisy_measurement

            noise = replace(self.noise, seed=(self.noise.seed, self._draws))
            self._draws += 1
            dist = noisy_measurement(dist, noise)
        return dist


def dcrab_optimize(target: TargetState, evaluator, config: OptimizerConfig, *,
                   initial: WaveformSegment | None = None, rng=None,
                   stage: str = "segment") -> OptimizationRecord:
    """dCRAB: random tone sets refined by Nelder-Mead, accepted only on strict improvement.

    Every super-iteration draws ``n_freq`` frequencies uniformly in the band
    and optimizes their 2 * n_freq sine/cosine amplitudes on top of the
    incumbent waveform.  Vertex 0 of the simplex is the incumbent itself; the
    other vertices perturb one new amplitude each by ``initial_amplitude``
    with a random sign.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    best = initial if initial is not None else WaveformSegment.zero(config.segment_duration)
    record = OptimizationRecord(stage=stage, seed=config.seed, target=target)
    counter = [0]

    def score(segment, super_iteration, freqs, coeffs):
        start = time.perf_counter()
        try:
            dist = evaluator(segment)
        except Exception as exc:
            raise EvaluatorError(
                f"evaluator failed in stage {stage!r} at coefficients {list(coeffs)}: {exc}",
                segment) from exc
        err = percent_error(dist, target)
        record.evaluations.append(Evaluation(stage, super_iteration, counter[0], tuple(freqs),
                                             tuple(float(c) for c in coeffs), err,
                                             time.perf_counter() - start))
        counter[0] += 1
        return err

    record.best_error = score(best, 0, (), ())
    record.best_segment = best
    record.history.append(record.best_error)
    if record.best_error < config.stop_error:
        record.converged = True
        return record

    k = config.n_freq
    lo, hi = config.band
    for it in range(1, config.max_super_iterations + 1):
        freqs = rng.uniform(lo, hi, size=k)
        signs = rng.choice((-1.0, 1.0), size=2 * k)
        incumbent = best

        def objective(x, freqs=freqs, incumbent=incumbent, it=it):
            try:
                candidate = incumbent.extended(freqs, x[:k], x[k:])
            except ValueError:
                return math.inf  # outside the phase amplitude bound
            return score(candidate, it, freqs, x)

        simplex = np.vstack([np.zeros(2 * k), np.diag(config.initial_amplitude * signs)])
        result = nelder_mead(objective, simplex, xatol=config.xatol, fatol=config.fatol,
                             max_evals=config.max_evals,
                             initial_values=[record.best_error] + [None] * (2 * k))
        if result.fun < record.best_error:
            best = incumbent.extended(freqs, result.x[:k], result.x[k:])
            record.best_error = float(result.fun)
            record.best_segment = best
        record.history.append(record.best_error)
        if record.best_error < config.stop_error:
            record.converged = True
            break
    return record


def _optimize_stage(target, lattice, config, prefix, entering, stage_index, label):
    evaluator = SegmentEvaluator(lattice, prefix, config.bias_acceleration, entering,
                                 noise=config.noise, label=label)
    best = None
    for attempt in range(config.max_attempts):
        rng = np.random.default_rng([config.seed, stage_index, attempt])
        record = dcrab_optimize(target, evaluator, config, rng=rng,
                                stage=f"{label}-{stage_index}" if stage_index else "split")
        record.seed = (config.seed, stage_index, attempt)
        if best is None or record.best_error < best.best_error:
            best = record
        if record.converged:
            break
    return best, evaluator


class InterferometerBuilder:
    """Sequential stage optimization shared by every interferometer length.

    Propagation stage k is optimized with the split and stages 1..k-1
    frozen, so the protocol for ``n`` is a prefix of the one for ``n + 1``.
    """

    def __init__(self, lattice: LatticeConfig, config: OptimizerConfig):
        self.lattice = lattice
        self.config = config
        self.target = TargetState.split(lattice.n_measure)
        self.records: list[OptimizationRecord] = []
        self.split: WaveformSegment | None = None
        self.props: list[WaveformSegment] = []
        self._state: QuantumState | None = None

    def _prefix(self) -> ShakingProtocol:
        segs = (self.split, *self.props)
        labels = ("split",) + ("propagate",) * len(self.props)
        return ShakingProtocol(segs, labels, self.config.bias_acceleration)

    def _run_split(self):
        empty = ShakingProtocol((), (), self.config.bias_acceleration)
        record, evaluator = _optimize_stage(self.target, self.lattice, self.config, empty,
                                            ground_bloch_state(self.lattice), 0, "split")
        self.split = record.best_segment
        self.records.append(record)
        self._state = evaluator.final_state(self.split)

    def _run_propagation(self):
        stage = len(self.props) + 1
        if self.config.share_propagation and self.props:
            segment = self.props[0]
        else:
            record, _ = _optimize_stage(self.target, self.lattice, self.config, self._prefix(),
                                        self._state, stage, "propagate")
            self.records.append(record)
            segment = record.best_segment
        protocol = self._prefix().with_segment(segment, "propagate")
        self._state = propagate(self._state, protocol, self.config.bias_acceleration,
                                segment.duration, self.lattice)
        self.props.append(segment)

    def protocol(self, n: int) -> ShakingProtocol:
        if n < 1:
            raise ValueError("interferometer index n must be >= 1")
        if self.split is None:
            self._run_split()
        while len(self.props) < 2 * (n - 1):
            self._run_propagation()
        base = build_interferometer(self.split, self.props[: 2 * (n - 1)], n)
        used = self.records[: 1 + (2 * (n - 1) if not self.config.share_propagation else min(1, n - 1))]
        converged = all(r.converged for r in used)
        return ShakingProtocol(base.segments, base.labels, self.config.bias_acceleration,
                               meta={"converged": converged,
                                     "stage_errors": [r.best_error for r in used]})

    def records_for(self, n: int) -> list[OptimizationRecord]:
        count = 1 + (2 * (n - 1) if not self.config.share_propagation else min(1, n - 1))
        return self.records[:count]


def optimize_interferometer(n: int, config: OptimizerConfig, lattice: LatticeConfig | None = None):
    """Optimize split and 2(n-1) propagation segments, then append the reversed split.

    Returns ``(protocol, records)``; ``protocol.meta['converged']`` is False
    when any stage missed ``config.stop_error``.
    """
    lattice = lattice or LatticeConfig()
    builder = InterferometerBuilder(lattice, config)
    protocol = builder.protocol(n)
    return protocol, builder.records_for(n)


def optimize_family(n_values, config: OptimizerConfig, lattice: LatticeConfig | None = None):
    """Protocols for several interferometer lengths from one sequential run."""
    lattice = lattice or LatticeConfig()
    builder = InterferometerBuilder(lattice, config)
    out = {}
    for n in sorted(n_values):
        out[n] = (builder.protocol(n), builder.records_for(n))
    return out
