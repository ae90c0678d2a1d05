"""Pure-numpy reference for the stepper inner loop.

Each entry ``z`` of the drive sequence encodes one exponential factor of
the fourth-order commutator-free Magnus step.  Writing ``z = rho * exp(-1j*psi)``,
the factor is

    D(psi) @ (U + (rho - 1) * M) @ D(psi).conj()

with ``D(psi) = diag(exp(1j * n * psi))``, ``U`` the half-step propagator of
the unshaken lattice and ``M`` its derivative with respect to the coupling
strength.
"""
import numpy as np


def evolve(psi_in, U, M, z):
    psi = np.array(psi_in, dtype=np.complex128, copy=True)
    nmax = (U.shape[0] - 1) // 2
    n = np.arange(-nmax, nmax + 1)
    for zz in z:
        r = abs(zz)
        d = (zz.conjugate() / r) ** n
        x = d.conj() * psi
        psi = d * (U @ x + (r - 1.0) * (M @ x))
    return psi
