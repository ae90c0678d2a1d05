"""Shaken optical lattice interferometry: simulation, waveform learning and sensitivity analysis."""
from .lattice import LatticeConfig, MomentumDistribution, QuantumState, ground_bloch_state, propagate
from .optimizer import OptimizerConfig, TargetState, optimize_interferometer, percent_error
from .protocol import ShakingProtocol, WaveformSegment, build_interferometer, reverse
from .sensing import NoiseModel, classical_fisher_information, sensitivity_vs_interrogation
from .fitting import fit_scaling
from .stepper import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "LatticeConfig", "MomentumDistribution", "NoiseModel", "OptimizerConfig",
    "QuantumState", "ShakingProtocol", "TargetState", "WaveformSegment", "build_interferometer",
    "classical_fisher_information", "fit_scaling", "ground_bloch_state", "optimize_interferometer",
    "percent_error", "propagate", "reverse", "sensitivity_vs_interrogation",
]
