"""Pure-Python fallback for the compiled Metropolis kernel (same contract)."""
import math

import numpy as np


def log_posterior(u, v, n, y, sigma_phi, h_mean, h_var, s_loc, s_scale, s_df,
                  log_h_min, log_s_min):
    if u < log_h_min or v < log_s_min:
        return -math.inf
    h = math.exp(u)
    s = math.exp(v)
    r = y - sigma_phi * n / (n + h)
    ss = float(r @ r)
    t = (s - s_loc) / s_scale
    return (-n.shape[0] * v - 0.5 * ss / (s * s)
            - 0.5 * (h - h_mean) ** 2 / h_var
            - 0.5 * (s_df + 1.0) * math.log1p(t * t / s_df)
            + u + v)


def rwm_block(n, y, sigma_phi, h_mean, h_var, s_loc, s_scale, s_df, log_h_min,
              log_s_min, state, chol, z, log_u, out):
    args = (n, y, sigma_phi, h_mean, h_var, s_loc, s_scale, s_df, log_h_min, log_s_min)
    u, v = float(state[0]), float(state[1])
    lp = log_posterior(u, v, *args)
    c00, c10, c11 = chol[0, 0], chol[1, 0], chol[1, 1]
    accepted = 0
    for i in range(log_u.shape[0]):
        z0, z1 = z[i, 0], z[i, 1]
        pu = u + c00 * z0
        pv = v + c10 * z0 + c11 * z1
        lq = log_posterior(pu, pv, *args)
        if log_u[i] < lq - lp:
            u, v, lp = pu, pv, lq
            accepted += 1
        out[i, 0] = u
        out[i, 1] = v
    state[0] = u
    state[1] = v
    return accepted
