"""Shaking waveforms: enveloped Fourier segments stitched into interferometers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_PHASE_AMPLITUDE = math.pi
SEGMENT_DURATION = 0.2e-3
LABELS = ("split", "propagate", "recombine")


class ProtocolFormatError(ValueError):
    """A serialized protocol document could not be parsed."""


def _as_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class WaveformSegment:
    """phi(t) = env(t) * sum_k [A_k sin(2 pi f_k t) + B_k cos(2 pi f_k t)] on [0, T].

    The envelope is sin^2(pi t / T) when ``envelope`` is set.  Tone
    amplitudes ``sqrt(A_k^2 + B_k^2)`` must sum to at most pi rad, which
    bounds the peak phase and keeps the waveform within the EOM drive range.
    """

    duration: float = SEGMENT_DURATION
    frequencies: tuple = ()
    sine: tuple = ()
    cosine: tuple = ()
    envelope: bool = True

    def __post_init__(self):
        freqs = _as_tuple(self.frequencies) if len(self.frequencies) else ()
        sine = _as_tuple(self.sine) if len(self.sine) else ()
        cosine = _as_tuple(self.cosine) if len(self.cosine) else ()
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "sine", sine)
        object.__setattr__(self, "cosine", cosine)
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        if not len(freqs) == len(sine) == len(cosine):
            raise ValueError("frequency, sine and cosine lists must have equal length")
        if not all(math.isfinite(v) for v in freqs + sine + cosine):
            raise ValueError("segment coefficients must be finite")
        if self.amplitude_sum > MAX_PHASE_AMPLITUDE * (1 + 1e-12):
            raise ValueError(
                f"tone amplitudes sum to {self.amplitude_sum:.4f} rad, above the pi rad bound")

    @classmethod
    def zero(cls, duration: float = SEGMENT_DURATION) -> "WaveformSegment":
        return cls(duration=duration)

    @property
    def amplitude_sum(self) -> float:
        return float(np.hypot(self.sine, self.cosine).sum()) if self.frequencies else 0.0

    @property
    def n_tones(self) -> int:
        return len(self.frequencies)

    def phase(self, t) -> np.ndarray:
        """Vectorized phase at local times ``t`` (seconds, within [0, T])."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.duration):
            raise ValueError(f"time outside segment domain [0, {self.duration}]")
        out = np.zeros(t.shape)
        if self.frequencies:
            arg = 2.0 * np.pi * np.multiply.outer(t, np.asarray(self.frequencies))
            out = np.sin(arg) @ np.asarray(self.sine) + np.cos(arg) @ np.asarray(self.cosine)
        if self.envelope:
            env = np.sin(np.pi * t / self.duration) ** 2
            # exact zeros at the endpoints, sin(pi) is not exactly 0 in floating point
            env = np.where((t == 0) | (t == self.duration), 0.0, env)
            out = env * out
        return out

    def extended(self, frequencies, sine, cosine) -> "WaveformSegment":
        """A copy with extra tones appended."""
        return WaveformSegment(
            self.duration,
            self.frequencies + _as_tuple(frequencies),
            self.sine + _as_tuple(sine),
            self.cosine + _as_tuple(cosine),
            self.envelope,
        )

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "envelope": self.envelope,
            "frequencies": list(self.frequencies),
            "sine": list(self.sine),
            "cosine": list(self.cosine),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WaveformSegment":
        return cls(
            duration=float(data["duration"]),
            frequencies=data.get("frequencies", ()),
            sine=data.get("sine", ()),
            cosine=data.get("cosine", ()),
            envelope=bool(data.get("envelope", True)),
        )


def eval_phase(segment: WaveformSegment, t: float) -> float:
    if not 0 <= t <= segment.duration:
        raise ValueError(f"t = {t} outside segment domain [0, {segment.duration}]")
    return float(segment.phase(np.asarray(t)))


def reverse(segment: WaveformSegment) -> WaveformSegment:
    """Time mirror: the returned segment satisfies phi_rev(t) = phi(T - t).

    With w = 2 pi f T, sin(2 pi f (T - t)) = sin w cos(2 pi f t) - cos w sin(2 pi f t)
    and likewise for the cosine, so each tone's (A, B) pair is rotated.
    The sin^2 envelope is already symmetric about T/2.
    """
    if not segment.frequencies:
        return segment
    f = np.asarray(segment.frequencies)
    A = np.asarray(segment.sine)
    B = np.asarray(segment.cosine)
    w = 2.0 * np.pi * f * segment.duration
    cw, sw = np.cos(w), np.sin(w)
    return WaveformSegment(
        segment.duration,
        segment.frequencies,
        -A * cw + B * sw,
        A * sw + B * cw,
        segment.envelope,
    )


@dataclass(frozen=True)
class ShakingProtocol:
    """Ordered segments played back to back.

    ``bias_acceleration`` records the acceleration the protocol was
    optimized under; sensitivity is evaluated around it.
    """

    segments: tuple = ()
    labels: tuple = ()
    bias_acceleration: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        segments = tuple(self.segments)
        labels = tuple(self.labels) if self.labels else ("propagate",) * len(segments)
        if len(labels) != len(segments):
            raise ValueError("need one label per segment")
        for label in labels:
            if label not in LABELS:
                raise ValueError(f"unknown segment label {label!r}")
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "labels", labels)
        bounds = np.concatenate([[0.0], np.cumsum([s.duration for s in segments])])
        object.__setattr__(self, "_bounds", bounds)

    @property
    def duration(self) -> float:
        """Interrogation time T_I: the sum of segment durations."""
        return float(math.fsum(s.duration for s in self.segments))

    @property
    def boundaries(self) -> np.ndarray:
        return self._bounds.copy()

    @property
    def max_frequency(self) -> float:
        return max((max(s.frequencies) for s in self.segments if s.frequencies), default=0.0)

    def segment_index(self, t):
        """Index of the segment owning each time; segments are closed-open except the last."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self._bounds, t, side="right") - 1
        return np.clip(idx, 0, max(len(self.segments) - 1, 0))

    def phase(self, t) -> np.ndarray:
        """Phase at absolute times ``t``; zero outside [0, T_I]."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        if not self.segments:
            return out
        inside = (t >= 0) & (t <= self._bounds[-1])
        idx = self.segment_index(t)
        for k, seg in enumerate(self.segments):
            sel = inside & (idx == k)
            if np.any(sel):
                local = np.clip(t[sel] - self._bounds[k], 0.0, seg.duration)
                # accumulated boundaries carry rounding; snap so envelopes vanish exactly there
                tol = 1e-9 * seg.duration
                local = np.where(local <= tol, 0.0, np.where(seg.duration - local <= tol,
                                                              seg.duration, local))
                out[sel] = seg.phase(local)
        return out

    def with_segment(self, segment: WaveformSegment, label: str = "propagate") -> "ShakingProtocol":
        return ShakingProtocol(self.segments + (segment,), self.labels + (label,),
                               self.bias_acceleration)

    def to_dict(self) -> dict:
        return {
            "format": "shakenlattice-protocol",
            "version": 1,
            "bias_acceleration": self.bias_acceleration,
            "interrogation_time": self.duration,
            "segments": [dict(label=lab, **seg.to_dict())
                         for lab, seg in zip(self.labels, self.segments)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ShakingProtocol":
        if not isinstance(data, dict) or "segments" not in data:
            raise ProtocolFormatError("protocol document has no 'segments' list")
        segments, labels = [], []
        for k, raw in enumerate(data["segments"]):
            try:
                segments.append(WaveformSegment.from_dict(raw))
                labels.append(raw.get("label", "propagate"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolFormatError(f"segment {k}: {exc}") from exc
        try:
            return cls(tuple(segments), tuple(labels), float(data.get("bias_acceleration", 0.0)))
        except ValueError as exc:
            raise ProtocolFormatError(str(exc)) from exc


def build_interferometer(split: WaveformSegment, props, n: int) -> ShakingProtocol:
    """Split, 2(n-1) propagation segments, then the reversed split.

    Splitting and recombination count toward T_I, so T_I = 0.4 n ms for
    0.2 ms segments.
    """
    props = list(props)
    if n < 1:
        raise ValueError("interferometer index n must be >= 1")
    if len(props) != 2 * (n - 1):
        raise ValueError(f"n = {n} needs {2 * (n - 1)} propagation segments, got {len(props)}")
    for seg in props:
        if not math.isclose(seg.duration, split.duration, rel_tol=1e-12):
            raise ValueError("propagation segments must match the split duration")
    segments = (split, *props, reverse(split))
    labels = ("split",) + ("propagate",) * len(props) + ("recombine",)
    return ShakingProtocol(segments, labels)


def sample(protocol: ShakingProtocol, sample_rate: float):
    """Uniform samples (t, phi) from 0 to T_I inclusive at ``sample_rate`` Hz."""
    if not sample_rate > 2.0 * protocol.max_frequency:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz is below twice the highest tone "
            f"({protocol.max_frequency:g} Hz)")
    n = int(math.floor(protocol.duration * sample_rate * (1 + 1e-12))) + 1
    t = np.arange(n) / sample_rate
    return t, protocol.phase(t)


def dumps(protocol: ShakingProtocol, **extra) -> str:
    doc = protocol.to_dict()
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def loads(text: str) -> ShakingProtocol:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolFormatError(f"not a JSON document: {exc}") from exc
    return ShakingProtocol.from_dict(data)


def load(path) -> ShakingProtocol:
    with open(path) as fh:
        return loads(fh.read())
