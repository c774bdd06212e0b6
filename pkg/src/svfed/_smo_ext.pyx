# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SMO loop for the SVDD dual.

Mirrors ``svfed._smo_py.smo_loop`` operation for operation so both backends
produce bitwise-identical iterates.
"""
from libc.math cimport INFINITY


def smo_loop(const double[:, ::1] K, double[::1] beta, double[::1] grad,
             double c, double tol, long long max_iter, double min_curvature):
    cdef Py_ssize_t n = K.shape[0]
    cdef Py_ssize_t t, i, j
    cdef long long it = 0
    cdef double gi, gj, viol, a, delta, cap_i, cap_j, step
    with nogil:
        while True:
            i = -1
            gi = INFINITY
            for t in range(n):
                if beta[t] < c and grad[t] < gi:
                    gi = grad[t]
                    i = t
            j = -1
            gj = -INFINITY
            for t in range(n):
                if beta[t] > 0.0 and grad[t] > gj:
                    gj = grad[t]
                    j = t
            viol = gj - gi
            if viol < tol or it >= max_iter:
                break
            a = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if a <= min_curvature:
                a = min_curvature
            delta = (gj - gi) / (2.0 * a)
            cap_i = c - beta[i]
            cap_j = beta[j]
            if delta >= cap_i or delta >= cap_j:
                if cap_i <= cap_j:
                    delta = cap_i
                    beta[i] = c
                    if cap_i == cap_j:
                        beta[j] = 0.0
                    else:
                        beta[j] = beta[j] - delta
                else:
                    delta = cap_j
                    beta[i] = beta[i] + delta
                    beta[j] = 0.0
            else:
                beta[i] = beta[i] + delta
                beta[j] = beta[j] - delta
            step = 2.0 * delta
            for t in range(n):
                grad[t] = grad[t] + step * (K[i, t] - K[j, t])
            it += 1
    return it, viol
