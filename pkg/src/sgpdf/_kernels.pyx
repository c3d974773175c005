# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: per-sample Q2 assembly + banded Cholesky, and KDE sums."""

from libc.math cimport exp, sqrt, M_PI
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from scipy.linalg.cython_lapack cimport dpbtrf, dpbtrs


cdef double EXP_LIMIT = 700.0


def mc_solve_batch(
    const double[:, ::1] eps,
    const double[:, :, ::1] modes_qp,
    double mu,
    double a_min,
    const double[:, :, ::1] grad_w,
    const long[:, :, ::1] band_pos,
    const double[::1] load,
    const double[::1] avg_w,
    const double[:, ::1] mass_band,
    int kind,
    int kd,
    double[::1] out,
    int[::1] status,
):
    """Solve one Poisson problem per row of ``eps`` and store its QoI in ``out``.

    ``band_pos[e, i, j]`` is the offset into LAPACK lower band storage
    (column-major, leading dimension ``kd + 1``) or -1 for eliminated
    entries.  ``kind``: 0 average, 1 integral of the square, 2 nodal max.
    ``status``: 0 ok, 1 exp overflow, 2 matrix not positive definite.
    """
    cdef Py_ssize_t M = eps.shape[0]
    cdef Py_ssize_t N = eps.shape[1]
    cdef Py_ssize_t n_el = modes_qp.shape[1]
    cdef int n = load.shape[0]
    cdef int ldab = kd + 1
    cdef int nrhs = 1
    cdef int info = 0
    cdef char uplo = b'L'
    cdef Py_ssize_t m, k, e, g, i, j, c, d
    cdef long pos
    cdef double gam, acc, val, umax
    cdef double *ab = <double *> malloc(ldab * n * sizeof(double))
    cdef double *u = <double *> malloc(n * sizeof(double))
    cdef double *a = <double *> malloc(9 * sizeof(double))
    cdef double ke[81]
    if ab == NULL or u == NULL or a == NULL:
        free(ab); free(u); free(a)
        raise MemoryError()
    try:
        with nogil:
            for m in range(M):
                status[m] = 0
                memset(ab, 0, ldab * n * sizeof(double))
                for e in range(n_el):
                    for g in range(9):
                        gam = mu
                        for k in range(N):
                            gam = gam + eps[m, k] * modes_qp[k, e, g]
                        if gam > EXP_LIMIT:
                            status[m] = 1
                        a[g] = a_min + exp(gam)
                    for i in range(9):
                        for j in range(i + 1):
                            acc = 0.0
                            for g in range(9):
                                acc = acc + a[g] * grad_w[g, i, j]
                            ke[i * 9 + j] = acc
                            ke[j * 9 + i] = acc
                    for i in range(9):
                        for j in range(9):
                            pos = band_pos[e, i, j]
                            if pos >= 0:
                                ab[pos] += ke[i * 9 + j]
                if status[m] != 0:
                    out[m] = 0.0
                    continue
                for i in range(n):
                    u[i] = load[i]
                dpbtrf(&uplo, &n, &kd, ab, &ldab, &info)
                if info != 0:
                    status[m] = 2
                    out[m] = 0.0
                    continue
                dpbtrs(&uplo, &n, &kd, &nrhs, ab, &ldab, u, &n, &info)
                if kind == 0:
                    acc = 0.0
                    for i in range(n):
                        acc = acc + avg_w[i] * u[i]
                    out[m] = acc
                elif kind == 1:
                    acc = 0.0
                    for c in range(n):
                        val = mass_band[c, 0] * u[c]
                        for d in range(1, kd + 1):
                            if c + d < n:
                                val = val + 2.0 * mass_band[c, d] * u[c + d]
                        acc = acc + val * u[c]
                    out[m] = acc
                else:
                    umax = 0.0  # boundary nodes carry exact zeros
                    for i in range(n):
                        if u[i] > umax:
                            umax = u[i]
                    out[m] = umax
    finally:
        free(ab)
        free(u)
        free(a)


def kde_eval(const double[::1] samples, const double[::1] x, double h, double[::1] out):
    """Gaussian KDE ``(1/(h M)) sum_m s((x - Q_m)/h)`` at every entry of ``x``."""
    cdef Py_ssize_t M = samples.shape[0]
    cdef Py_ssize_t G = x.shape[0]
    cdef Py_ssize_t i, m
    cdef double inv_h = 1.0 / h
    cdef double norm = 1.0 / (h * M * sqrt(2.0 * M_PI))
    cdef double acc, z, xi
    with nogil:
        for i in range(G):
            acc = 0.0
            xi = x[i]
            for m in range(M):
                z = (xi - samples[m]) * inv_h
                acc = acc + exp(-0.5 * z * z)
            out[i] = acc * norm
