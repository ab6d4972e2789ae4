"""Naive loop-based oracles, independent of the vectorized implementations.

Everything here substitutes directly into the defining formulas, one
record at a time, so a disagreement with the package points at the
package's bookkeeping rather than at the formulas.
"""

import math

import numpy as np


def step_value(times, sizes, u):
    return sum(s for t, s in zip(times, sizes) if t <= u)


def psi_prop_odds_naive(u, delta, z, w, beta, jump_times, jump_sizes):
    """Direct substitution into the survival self-consistency operator."""
    u = np.asarray(u, float)
    delta = np.asarray(delta, float)
    z = np.atleast_2d(np.asarray(z, float))
    if z.shape[0] != len(u):
        z = z.T
    beta = np.atleast_1d(np.asarray(beta, float))
    event_times = sorted(set(u[delta == 1]))
    jumps = []
    for s in event_times:
        edn = sum(wi for ui, di, wi in zip(u, delta, w) if di == 1 and ui == s)
        ew = 0.0
        for ui, di, zi, wi in zip(u, delta, z, w):
            if ui >= s:
                q = math.exp(float(zi @ beta))
                a_u = step_value(jump_times, jump_sizes, ui)
                ew += wi * (1 + di) * q / (1 + q * a_u)
        jumps.append(edn / ew)
    return np.array(event_times), np.array(jumps)


def loglik_prop_odds_naive(u, delta, z, w, beta, jump_times, jump_sizes):
    u = np.asarray(u, float)
    delta = np.asarray(delta, float)
    z = np.atleast_2d(np.asarray(z, float))
    if z.shape[0] != len(u):
        z = z.T
    beta = np.atleast_1d(np.asarray(beta, float))
    total = 0.0
    for ui, di, zi, wi in zip(u, delta, z, w):
        q = math.exp(float(zi @ beta))
        a_u = step_value(jump_times, jump_sizes, ui)
        term = -(1 + di) * math.log(1 + q * a_u)
        if di == 1:
            jump = dict(zip(jump_times, jump_sizes)).get(ui, 0.0)
            term += float(zi @ beta) + math.log(jump)
        total += wi * term
    return total


def psi_missing_cov_naive(r, y, x, w, support, family, theta, g_masses):
    """Direct substitution into the missing-covariate operator."""
    theta = np.asarray(theta, float)
    support = np.asarray(support, float)
    g = np.asarray(g_masses, float)
    out = []
    incomplete = [(yi, wi) for ri, yi, wi in zip(r, y, w) if ri == 2]
    for j, xj in enumerate(support):
        p1 = sum(
            wi for ri, xi, wi in zip(r, x, w) if ri == 1 and xi == xj
        )
        a = 1.0
        for yi, wi in incomplete:
            fy = sum(
                float(family.density(yi, xk, theta)) * gk
                for xk, gk in zip(support, g)
            )
            a -= wi * float(family.density(yi, xj, theta)) / fy
        out.append(p1 / a)
    return np.array(out)


def normal_fisher_information(theta, x_moment1, x_moment2):
    """Closed-form information of the normal regression family.

    Parametrization (intercept, slope, log sigma); the location block is
    the design second-moment matrix over sigma^2 and the scale component
    is the constant 2.
    """
    sigma2 = math.exp(2.0 * theta[2])
    return np.array([
        [1.0 / sigma2, x_moment1 / sigma2, 0.0],
        [x_moment1 / sigma2, x_moment2 / sigma2, 0.0],
        [0.0, 0.0, 2.0],
    ])
