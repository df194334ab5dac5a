# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo projection kernel. See ``_kernels_py`` for the contract."""

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def simulate_grouped(const double[:, ::1] X, const double[::1] offset, const double[:, ::1] beta,
                     const double[:, ::1] z, double phi, const cnp.int64_t[::1] groups,
                     double[:, ::1] out):
    cdef Py_ssize_t nb = beta.shape[0]
    cdef Py_ssize_t nc = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t b, c, j
    cdef cnp.int64_t g
    cdef double eta, mu, v
    if offset.shape[0] != nc or beta.shape[1] != p or groups.shape[0] != nc or out.shape[0] != nb:
        raise ValueError("shape mismatch")
    if phi > 0 and (z.shape[0] != nb or z.shape[1] != nc):
        raise ValueError("noise matrix shape mismatch")
    with nogil:
        for b in range(nb):
            for c in range(nc):
                g = groups[c]
                if g < 0:
                    continue
                eta = offset[c]
                for j in range(p):
                    eta = eta + X[c, j] * beta[b, j]
                mu = exp(eta)
                if phi > 0:
                    v = mu + sqrt(phi * mu) * z[b, c]
                    if v < 0:
                        v = 0.0
                else:
                    v = mu
                out[b, g] += v
