# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop of the lattice stepper.

Mirrors ``_stepper_py.evolve`` exactly; see that module for the algebra.
"""
import numpy as np

from libc.math cimport sqrt


def evolve(psi_in, const double complex[:, ::1] U, const double complex[:, ::1] M,
           const double complex[::1] z):
    cdef Py_ssize_t dim = U.shape[0]
    cdef Py_ssize_t nmax = (dim - 1) // 2
    cdef Py_ssize_t nexp = z.shape[0]
    cdef Py_ssize_t s, i, j, k
    cdef double complex zz, w, acc_u, acc_m
    cdef double r, eps

    out = np.array(psi_in, dtype=np.complex128, copy=True)
    cdef double complex[::1] psi = out
    cdef double complex[::1] x = np.empty(dim, dtype=np.complex128)
    cdef double complex[::1] d = np.empty(dim, dtype=np.complex128)

    for s in range(nexp):
        zz = z[s]
        r = sqrt(zz.real * zz.real + zz.imag * zz.imag)
        w = zz.conjugate() / r
        eps = r - 1.0
        d[nmax] = 1.0
        for k in range(1, nmax + 1):
            d[nmax + k] = d[nmax + k - 1] * w
            d[nmax - k] = d[nmax + k].conjugate()
        for j in range(dim):
            x[j] = d[j].conjugate() * psi[j]
        for i in range(dim):
            acc_u = 0.0
            acc_m = 0.0
            for j in range(dim):
                acc_u = acc_u + U[i, j] * x[j]
                acc_m = acc_m + M[i, j] * x[j]
            psi[i] = d[i] * (acc_u + eps * acc_m)
    return out
