"""Finite-sample Monte Carlo check of the asymptotic power.

Data are simulated at the local alternative ``omega_n = omega_0 + Delta eta / sqrt(n)``,
the fitted family is estimated by maximum likelihood, and the Wald
statistic with expected information at the estimates is compared with the
central chi-square critical value.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import asymptotics as asy
from .expectation import expected_information
from .models import (
    DimParams,
    Family,
    NullParams,
    dim_mean,
    dim_mean_gradient,
    index_map,
    mean_function,
    pairwise_products,
)
from .scenarios import PowerScenario, build_constraint

GRAD_TOL = 1e-6
MAX_NONCONVERGED = 0.01


class FitError(RuntimeError):
    """Maximum likelihood fitting failed or the data cannot identify the model."""


class ConvergenceFailure(RuntimeError):
    """Too many replicates failed to converge for the rejection rate to be trusted."""


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class FitResult:
    family: Family
    estimates: np.ndarray
    converged: bool
    loglik: float
    iterations: int
    n: int
    grad_norm: float = 0.0


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for the replicate addressed by ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def local_alternative(truth, nullparams: NullParams, eta_full, Delta: float, n: int) -> np.ndarray:
    return nullparams.flat(truth) + Delta / math.sqrt(n) * np.asarray(eta_full, dtype=float)


def generate_data(truth, omega_n, dist, n: int, seed) -> Dataset:
    truth = Family.parse(truth)
    omega_n = np.asarray(omega_n, dtype=float)
    p = dist.p
    if truth is Family.DIM and not omega_n[p + 1] > 0:
        raise ValueError(f"lambda_n = {omega_n[p + 1]} must be > 0; Delta is too negative for n = {n}")
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(seed)
    x = dist.sample(rng, n)
    mu = mean_function(truth, omega_n, p)(x)
    y = mu + math.sqrt(omega_n[-1]) * rng.standard_normal(n)
    return Dataset(x, y)


def _normal_loglik(rss: float, n: int) -> float:
    s2 = rss / n
    if s2 <= 0:
        return math.inf
    return -0.5 * n * (math.log(2 * math.pi * s2) + 1.0)


def pim_design(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.column_stack([np.ones(len(x)), x, pairwise_products(x)])


def fit_pim(data: Dataset) -> FitResult:
    D = pim_design(data.x)
    n, k = D.shape
    if n <= k:
        raise FitError(f"n = {n} observations leave no residual degrees of freedom for {k} mean parameters")
    coef, _, rank, _ = np.linalg.lstsq(D, data.y, rcond=None)
    if rank < k:
        raise FitError(f"PIM design has rank {rank} < {k}")
    resid = data.y - D @ coef
    rss = float(resid @ resid)
    if rss <= 0:
        raise FitError("zero residual sum of squares; sigma2 estimate is degenerate")
    s2 = rss / n
    grad = np.linalg.norm(D.T @ resid / n) / max(s2, 1e-6)
    return FitResult(Family.PIM, np.append(coef, s2), bool(grad < GRAD_TOL), _normal_loglik(rss, n), 1, n, grad)


def _dim_default_init(data: Dataset) -> np.ndarray:
    p = data.x.shape[1]
    A = np.column_stack([np.ones(data.n), data.x])
    coef = np.linalg.lstsq(A, data.y, rcond=None)[0]
    beta = np.maximum(coef[1:], 1e-6)
    resid = data.y - A @ coef
    return np.concatenate([[coef[0]], beta, [1.0], [max(resid @ resid / data.n, 1e-12)]])[: p + 3]


def fit_dim(data: Dataset, init=None, max_iter: int = 500) -> FitResult:
    """DIM maximum likelihood with ``sigma2`` profiled out.

    ``beta_i`` and ``lambda`` are optimised on the log scale so they stay
    positive; the remaining problem is nonlinear least squares, solved by
    Levenberg-Marquardt with the analytic mean Jacobian.
    """
    x, y = np.asarray(data.x, dtype=float), np.asarray(data.y, dtype=float)
    n, p = x.shape
    if np.any(x < 0):
        raise FitError("DIM fitting needs nonnegative covariates")
    if n <= p + 2:
        raise FitError(f"n = {n} is too small for {p + 2} DIM mean parameters")
    theta0 = _dim_default_init(data) if init is None else np.asarray(init, dtype=float)
    if theta0.shape != (p + 3,) or np.any(theta0[1 : p + 2] <= 0):
        raise FitError("DIM initial values need length p + 3 with positive beta and lambda")
    u0 = np.concatenate([[theta0[0]], np.log(theta0[1 : p + 2])])
    # Repeated covariate rows collapse exactly: RSS = sum_g n_g (ybar_g - mu_g)^2 + within-group SS.
    xu, inv, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    ybar = np.bincount(inv, weights=y) / counts
    within = float(np.sum((y - ybar[inv]) ** 2))
    sw = np.sqrt(counts)

    def unpack(u):
        return DimParams(NullParams(u[0], np.exp(u[1 : p + 1]), 1.0), math.exp(u[p + 1]))

    def resid(u):
        return sw * (dim_mean(unpack(u), xu) - ybar)

    def jac(u):
        dp = unpack(u)
        g = dim_mean_gradient(dp, xu)
        g[:, 1 : p + 1] *= dp.null.beta
        g[:, p + 1] *= dp.lam
        return g * sw[:, None]

    m = len(xu)
    with np.errstate(over="raise", invalid="raise"):
        try:
            if m > p + 2:
                sol = optimize.least_squares(
                    resid, u0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iter
                )
            else:
                sol = optimize.least_squares(
                    resid, u0, jac=jac, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iter
                )
        except (FloatingPointError, ValueError, OverflowError) as exc:
            raise FitError(f"DIM optimisation left the valid region: {exc}") from exc
    dp = unpack(sol.x)
    r = dim_mean(dp, x) - y
    rss = float(r @ r)
    s2 = rss / n
    g = dim_mean_gradient(dp, xu).T @ (sw * resid(sol.x)) / n
    # gradient of the mean log-likelihood; the sigma2 component is zero at the profile optimum
    grad = float(np.linalg.norm(g)) / max(s2, 1e-6)
    theta = np.concatenate([[dp.null.beta0], dp.null.beta, [dp.lam], [s2]])
    converged = bool(sol.status > 0 and np.all(np.isfinite(theta)) and grad < GRAD_TOL)
    return FitResult(Family.DIM, theta, converged, _normal_loglik(rss, n), int(sol.nfev), n, grad)


def fit_model(family, data: Dataset) -> FitResult:
    family = Family.parse(family)
    if family is Family.DIM:
        return fit_dim(data)
    if family is Family.PIM:
        return fit_pim(data)
    raise ValueError("only DIM and PIM fits carry an interaction test")


def wald_statistic(fit: FitResult, cs: asy.ConstraintSpec, info_at: np.ndarray) -> float:
    """``n (C theta - zeta0)^T {C I^-1 C^T}^-1 (C theta - zeta0)`` with ``I`` evaluated at the fit."""
    if not fit.converged:
        raise FitError("Wald statistic requested for a non-converged fit")
    d = cs.C @ fit.estimates - cs.zeta0
    middle = cs.C @ asy.spd_solve(info_at, cs.C.T, "information at the estimates")
    w = fit.n * float(d @ asy.spd_solve(middle, d, "C I^-1 C^T at the estimates"))
    return max(w, 0.0)


@dataclass(frozen=True)
class RejectionResult:
    fit: Family
    Delta: float
    n: int
    reps: int
    rejections: int
    converged: int
    nonconverged: int

    @property
    def rate(self) -> float:
        return self.rejections / self.converged if self.converged else math.nan

    @property
    def se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1 - r) / self.converged) if self.converged else math.nan

    @property
    def nonconverged_fraction(self) -> float:
        return self.nonconverged / self.reps


def _replicate_block(args):
    scenario, fit, n, Delta, seed, start, stop = args
    fit = Family.parse(fit)
    cs = build_constraint(fit, scenario.p)
    crit = asy.chisq_quantile(cs.r, scenario.alpha)
    omega = local_alternative(scenario.truth, scenario.nullparams, scenario.direction, Delta, n)
    hits = ok = 0
    for rep in range(start, stop):
        data = generate_data(scenario.truth, omega, scenario.dist, n, replicate_rng(seed, rep))
        try:
            res = fit_model(fit, data)
            if not res.converged:
                continue
            w = wald_statistic(res, cs, expected_information(fit, res.estimates, scenario.dist))
        except (FitError, asy.SingularityError, ValueError):
            continue
        ok += 1
        hits += w > crit
    return hits, ok


def rejection_rate(
    scenario: PowerScenario,
    fit,
    n: int,
    reps: int,
    seed: int,
    Delta: float | None = None,
    workers: int = 1,
    rep_offset: int = 0,
) -> RejectionResult:
    """Empirical rejection rate of the ``fit``-based Wald test at level ``scenario.alpha``.

    Replicate ``i`` always draws from the stream keyed by ``(seed, rep_offset + i)``,
    so results do not depend on ``workers`` or scheduling.
    """
    fit = Family.parse(fit)
    if reps < 100:
        raise ValueError("reps must be >= 100")
    if Delta is None:
        if scenario.delta_grid.size != 1:
            raise ValueError("give Delta explicitly when the scenario grid has several values")
        Delta = float(scenario.delta_grid[0])
    imap = index_map(fit, scenario.p)
    if n <= imap.dim:
        raise ValueError(f"n = {n} is too small to fit {imap.dim} parameters")
    bounds = np.linspace(rep_offset, rep_offset + reps, max(1, min(workers, reps)) * 4 + 1).astype(int)
    jobs = [(scenario, fit.value, n, Delta, seed, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_replicate_block, jobs))
    else:
        parts = [_replicate_block(j) for j in jobs]
    hits = sum(h for h, _ in parts)
    ok = sum(o for _, o in parts)
    result = RejectionResult(fit, float(Delta), n, reps, int(hits), int(ok), reps - int(ok))
    if result.nonconverged_fraction >= MAX_NONCONVERGED:
        raise ConvergenceFailure(
            f"{result.nonconverged} of {reps} {fit.value} fits failed "
            f"(truth={scenario.truth.value}, Delta={Delta}, n={n})"
        )
    return result


def pool_results(a: RejectionResult, b: RejectionResult) -> RejectionResult:
    if (a.fit, a.Delta, a.n) != (b.fit, b.Delta, b.n):
        raise ValueError("can only pool runs of the same configuration")
    return RejectionResult(
        a.fit, a.Delta, a.n, a.reps + b.reps, a.rejections + b.rejections,
        a.converged + b.converged, a.nonconverged + b.nonconverged,
    )

