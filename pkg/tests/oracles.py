"""Reference computations that share no code path with the closed-form routines under test."""

import numpy as np
from scipy import optimize

from dimpower.expectation import enumerate_support
from dimpower.models import Family, index_map, mean_function, score_at_null


def mc_score_moment(fitF, trueG, params, dist, n_draws, seed):
    """Average of ``s_F s_G^T`` over simulated ``(X, Y)`` at the null, with per-entry SEs."""
    rng = np.random.default_rng(seed)
    x = dist.sample(rng, n_draws)
    mu0 = params.beta0 + x @ params.beta
    y = mu0 + np.sqrt(params.sigma2) * rng.standard_normal(n_draws)
    sf = score_at_null(fitF, params, x, y)
    sg = score_at_null(trueG, params, x, y)
    mean = sf.T @ sg / n_draws
    second = (sf**2).T @ (sg**2) / n_draws
    se = np.sqrt(np.maximum(second - mean**2, 0.0) / (n_draws - 1))
    return mean, se


def kl_projection(fitF, trueG, omega, dist, theta_start):
    """Minimise E_omega log(g / f) over the fitted family by direct optimisation.

    For normal errors the mean parameters minimise the support-weighted squared
    distance between the two mean functions and
    ``sigma2_* = sigma2_omega + min distance``.
    """
    fitF, trueG = Family.parse(fitF), Family.parse(trueG)
    support = enumerate_support(dist)
    xs = np.array([x for x, _ in support])
    sw = np.sqrt(np.array([w for _, w in support]))
    p = dist.p
    mu_g = mean_function(trueG, omega, p)(xs)
    kf = index_map(fitF, p).dim

    def resid(mean_params):
        theta = np.append(mean_params, 1.0)
        return sw * (mean_function(fitF, theta, p)(xs) - mu_g)

    sol = optimize.least_squares(
        resid, np.asarray(theta_start, dtype=float)[: kf - 1], jac="3-point",
        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000,
    )
    dist2 = float(resid(sol.x) @ resid(sol.x))
    return np.append(sol.x, omega[-1] + dist2)


def kl_derivative_fd(fitF, trueG, params, dist, h=1e-4):
    """Central differences of the re-minimised KL projection in every true-parameter direction."""
    omega0 = params.flat(trueG)
    theta0 = params.flat(fitF)
    cols = []
    for k in range(omega0.size):
        e = np.zeros_like(omega0)
        e[k] = h
        up = kl_projection(fitF, trueG, omega0 + e, dist, theta0)
        dn = kl_projection(fitF, trueG, omega0 - e, dist, theta0)
        cols.append((up - dn) / (2 * h))
    return np.column_stack(cols)


def brute_force_moment(family_f, family_g, params, support):
    """Sum of probability-weighted score outer products with an exact Y-expectation by Gauss-Hermite."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(12)
    weights = weights / weights.sum()
    out = 0.0
    for x, w in support:
        mu0 = params.beta0 + x @ params.beta
        y = mu0 + np.sqrt(params.sigma2) * nodes
        xs = np.repeat(x[None, :], len(nodes), axis=0)
        sf = score_at_null(family_f, params, xs, y)
        sg = score_at_null(family_g, params, xs, y)
        out = out + w * (sf * weights[:, None]).T @ sg
    return out
