# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled random-walk Metropolis kernel for the variance-curve posterior."""
from libc.math cimport exp, log, log1p, INFINITY

import numpy as np


cdef double _logpost(double u, double v, const double[::1] n, const double[::1] y,
                     double sigma_phi, double h_mean, double h_var, double s_loc,
                     double s_scale, double s_df, double log_h_min,
                     double log_s_min) noexcept nogil:
    cdef Py_ssize_t i
    cdef double h, s, r, ss = 0.0, t
    if u < log_h_min or v < log_s_min:
        return -INFINITY
    h = exp(u)
    s = exp(v)
    for i in range(n.shape[0]):
        r = y[i] - sigma_phi * n[i] / (n[i] + h)
        ss += r * r
    t = (s - s_loc) / s_scale
    return (-n.shape[0] * v - 0.5 * ss / (s * s)
            - 0.5 * (h - h_mean) * (h - h_mean) / h_var
            - 0.5 * (s_df + 1.0) * log1p(t * t / s_df)
            + u + v)


def log_posterior(double u, double v, const double[::1] n, const double[::1] y,
                  double sigma_phi, double h_mean, double h_var, double s_loc,
                  double s_scale, double s_df, double log_h_min, double log_s_min):
    return _logpost(u, v, n, y, sigma_phi, h_mean, h_var, s_loc, s_scale, s_df,
                    log_h_min, log_s_min)


def rwm_block(const double[::1] n, const double[::1] y, double sigma_phi,
              double h_mean, double h_var, double s_loc, double s_scale, double s_df,
              double log_h_min, double log_s_min, double[::1] state,
              const double[:, ::1] chol, const double[:, ::1] z,
              const double[::1] log_u, double[:, ::1] out):
    """Run ``len(log_u)`` Metropolis steps on (log h, log sigma).

    ``state`` is updated in place; proposals are ``state + chol @ z[i]``.
    Returns the number of accepted proposals.
    """
    cdef Py_ssize_t i, steps = log_u.shape[0]
    cdef long accepted = 0
    cdef double u = state[0], v = state[1], pu, pv, lp, lq
    lp = _logpost(u, v, n, y, sigma_phi, h_mean, h_var, s_loc, s_scale, s_df,
                  log_h_min, log_s_min)
    with nogil:
        for i in range(steps):
            pu = u + chol[0, 0] * z[i, 0]
            pv = v + chol[1, 0] * z[i, 0] + chol[1, 1] * z[i, 1]
            lq = _logpost(pu, pv, n, y, sigma_phi, h_mean, h_var, s_loc, s_scale,
                          s_df, log_h_min, log_s_min)
            if log_u[i] < lq - lp:
                u = pu
                v = pv
                lp = lq
                accepted += 1
            out[i, 0] = u
            out[i, 1] = v
    state[0] = u
    state[1] = v
    return accepted
