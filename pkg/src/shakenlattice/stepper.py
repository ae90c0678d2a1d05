"""Backend selection for the propagation kernel.

The compiled extension is used when importable; set
``SHAKENLATTICE_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _stepper_py

evolve_python = _stepper_py.evolve

try:
    from ._stepper import evolve as evolve_compiled
except ImportError:  # extension not built
    evolve_compiled = None

if evolve_compiled is not None and os.environ.get("SHAKENLATTICE_BACKEND", "").lower() != "python":
    evolve = evolve_compiled
    BACKEND = "compiled"
else:
    evolve = evolve_python
    BACKEND = "python"

__all__ = ["BACKEND", "evolve", "evolve_compiled", "evolve_python"]
