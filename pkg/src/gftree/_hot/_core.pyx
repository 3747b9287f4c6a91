# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (see _np.py for semantics)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, pow

cnp.import_array()


def powerlaw_lifetimes(cnp.ndarray[cnp.float64_t, ndim=1] u,
                       cnp.ndarray[cnp.float64_t, ndim=1] x,
                       cnp.ndarray[cnp.float64_t, ndim=1] v,
                       double coeff, double lam):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double e
    for i in range(n):
        e = -log(u[i])
        out[i] = log1p(lam * v[i] * e / (coeff * pow(x[i], lam))) / (lam * v[i])
    return out


def kernel_sums(cnp.ndarray[cnp.float64_t, ndim=1] sizes_sorted,
                cnp.ndarray[cnp.float64_t, ndim=1] centers,
                double h, double radius, double scale):
    cdef Py_ssize_t j, i, m = centers.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lo = np.searchsorted(
        sizes_sorted, centers - radius * h, side="left").astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hi = np.searchsorted(
        sizes_sorted, centers + radius * h, side="right").astype(np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m)
    cdef double acc, z
    for j in range(m):
        acc = 0.0
        for i in range(lo[j], hi[j]):
            z = (sizes_sorted[i] - centers[j]) / h
            acc += exp(-0.5 * z * z)
        out[j] = acc * scale
    return out


def pde_run(cnp.ndarray[cnp.float64_t, ndim=1] n0, double dt,
            cnp.ndarray[cnp.float64_t, ndim=1] flux_coef,
            cnp.ndarray[cnp.float64_t, ndim=1] src_rate,
            cnp.ndarray[cnp.float64_t, ndim=1] sink_rate,
            cnp.ndarray[cnp.int64_t, ndim=1] src_idx,
            cnp.ndarray[cnp.float64_t, ndim=1] src_w,
            double dx, long max_steps, double stop_rate):
    cdef Py_ssize_t i, m = n0.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] n = n0.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] n_new = np.empty(m)
    cdef double max_drift = 0.0, rate = 1e308
    cdef double mass, drift, ntilde, influx, outflux, val
    cdef long steps = 0, k
    cdef Py_ssize_t ii
    for k in range(1, max_steps + 1):
        steps = k
        influx = 0.0
        for i in range(m):
            outflux = flux_coef[i] * n[i]
            ii = src_idx[i]
            if ii >= 0:
                if ii + 1 < m:
                    ntilde = (1.0 - src_w[i]) * n[ii] + src_w[i] * n[ii + 1]
                else:
                    ntilde = (1.0 - src_w[i]) * n[ii] + src_w[i] * n[m - 1]
            else:
                ntilde = 0.0
            val = n[i] + dt * (-(outflux - influx) / dx
                               + src_rate[i] * ntilde - sink_rate[i] * n[i])
            n_new[i] = val if val > 0.0 else 0.0
            influx = outflux
        # plain cell-sum mass: exactly what the upwind fluxes conserve
        mass = 0.0
        for i in range(m):
            mass += n_new[i]
        mass *= dx
        drift = fabs(mass - 1.0) / dt
        if drift > max_drift:
            max_drift = drift
        rate = 0.0
        if mass > 0.0:
            for i in range(m):
                n_new[i] /= mass
        for i in range(m):
            rate += fabs(n_new[i] - n[i])
            n[i] = n_new[i]
        rate = rate * dx / dt
        if rate < stop_rate:
            break
    return n, steps, rate, max_drift
