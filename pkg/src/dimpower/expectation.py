"""Covariate distributions and null-point score moments.

The expectation over ``Y | X`` is taken analytically (normal moments), so
only the sum over the covariate law is numerical.  For normal errors at the
null, with mean-gradients ``g_F``, ``g_G``::

    E[s_F s_G^T] = [[E_X(g_F g_G^T) / sigma2, 0], [0, 1 / (2 sigma2^2)]]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .models import (
    DimParams,
    Family,
    NullParams,
    ParamIndexMap,
    additive_mean_gradient,
    dim_mean_gradient,
    index_map,
    mean_gradient_at_null,
    pim_mean_gradient_at_null,
)

MAX_ENUMERATION_P = 24
_CHUNK = 1 << 14


class ProductBernoulli:
    """Independent Bernoulli covariates with success probabilities ``q``."""

    def __init__(self, p: int, q=0.5):
        q = np.asarray(q, dtype=float)
        if q.ndim == 0:
            q = np.full(p, float(q))
        if p < 1 or q.shape != (p,):
            raise ValueError(f"need p >= 1 and {p} success probabilities")
        if np.any((q <= 0) | (q >= 1)):
            raise ValueError("Bernoulli probabilities must lie in (0, 1)")
        self.p = int(p)
        self.q = q

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return (rng.random((n, self.p)) < self.q).astype(float)

    def __repr__(self):
        return f"ProductBernoulli(p={self.p}, q={self.q.tolist()})"


class ExplicitDiscrete:
    """Finitely supported covariate law given as points and probabilities."""

    def __init__(self, support, probs):
        support = np.atleast_2d(np.asarray(support, dtype=float))
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(support),):
            raise ValueError("one probability per support point is required")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        self.support = support
        self.probs = probs
        self.p = support.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return self.support[idx]

    def __repr__(self):
        return f"ExplicitDiscrete(n_points={len(self.probs)}, p={self.p})"


class Sampleable:
    """Covariate law known only through a sampler ``(rng, n) -> (n, p) array``."""

    def __init__(self, sampler: Callable[[np.random.Generator, int], np.ndarray], p: int):
        self.sampler = sampler
        self.p = int(p)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = np.asarray(self.sampler(rng, n), dtype=float)
        if x.shape != (n, self.p):
            raise ValueError(f"sampler returned shape {x.shape}, expected {(n, self.p)}")
        return x

    def __repr__(self):
        return f"Sampleable(p={self.p})"


CovariateDistribution = ProductBernoulli | ExplicitDiscrete | Sampleable


def _binary_block(p: int, start: int, stop: int) -> np.ndarray:
    k = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(p - 1, -1, -1, dtype=np.int64)
    return ((k[:, None] >> shifts) & 1).astype(float)


def iter_support(dist, chunk: int = _CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(points, probs)`` blocks covering the finite support in canonical order.

    Product-Bernoulli points come in binary-counting order with ``x_1`` as the
    most significant bit.
    """
    if isinstance(dist, Sampleable):
        raise TypeError("a Sampleable distribution has no finite support; use Monte Carlo")
    if isinstance(dist, ExplicitDiscrete):
        keep = dist.probs > 0
        pts, pr = dist.support[keep], dist.probs[keep]
        for s in range(0, len(pr), chunk):
            yield pts[s : s + chunk], pr[s : s + chunk]
        return
    if dist.p > MAX_ENUMERATION_P:
        raise ValueError(f"exact enumeration refused for p = {dist.p} > {MAX_ENUMERATION_P}")
    total = 1 << dist.p
    for s in range(0, total, chunk):
        x = _binary_block(dist.p, s, min(s + chunk, total))
        yield x, np.prod(np.where(x > 0, dist.q, 1.0 - dist.q), axis=1)


def enumerate_support(dist) -> list[tuple[np.ndarray, float]]:
    return [(x, float(w)) for pts, pr in iter_support(dist) for x, w in zip(pts, pr)]


def _compensated_sum(blocks) -> np.ndarray:
    total = comp = None
    for b in blocks:
        if total is None:
            total, comp = b.copy(), np.zeros_like(b)
            continue
        y = b - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _exact_gradient_moment(fitF: Family, trueG: Family, params: NullParams, dist) -> np.ndarray:
    def blocks():
        for x, w in iter_support(dist):
            gf = mean_gradient_at_null(fitF, params, x)
            gg = gf if fitF is trueG else mean_gradient_at_null(trueG, params, x)
            yield (gf * w[:, None]).T @ gg

    return _compensated_sum(blocks())


def _assemble(gmom: np.ndarray, sigma2: float) -> np.ndarray:
    kf, kg = gmom.shape
    out = np.zeros((kf + 1, kg + 1))
    out[:kf, :kg] = gmom / sigma2
    out[kf, kg] = 1.0 / (2.0 * sigma2**2)
    return out


def _check_p(params: NullParams, dist):
    if params.p != dist.p:
        raise ValueError(f"parameters have p = {params.p} but covariates have p = {dist.p}")


def cross_moment(fitF, trueG, params: NullParams, dist, n_samples: int | None = None, seed=None) -> np.ndarray:
    """``E[s_F s_G^T]`` at the shared null point, rows in F's order, columns in G's."""
    fitF, trueG = Family.parse(fitF), Family.parse(trueG)
    _check_p(params, dist)
    if isinstance(dist, Sampleable):
        if n_samples is None:
            raise ValueError("a Sampleable distribution needs n_samples for Monte Carlo")
        return mc_cross_moment(fitF, trueG, params, dist, n_samples, seed)
    out = _assemble(_exact_gradient_moment(fitF, trueG, params, dist), params.sigma2)
    if fitF is trueG:
        out = 0.5 * (out + out.T)
    return out


def fisher_information(family, params: NullParams, dist, n_samples: int | None = None, seed=None) -> np.ndarray:
    return cross_moment(family, family, params, dist, n_samples, seed)


def mc_cross_moment(fitF, trueG, params: NullParams, dist, n_samples: int, seed=None) -> np.ndarray:
    """Monte Carlo over ``X`` only; the ``Y | X`` moments stay closed form."""
    fitF, trueG = Family.parse(fitF), Family.parse(trueG)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_p(params, dist)
    rng = np.random.default_rng(seed)
    x = dist.sample(rng, n_samples)

    def blocks():
        for s in range(0, n_samples, _CHUNK):
            xb = x[s : s + _CHUNK]
            gf = mean_gradient_at_null(fitF, params, xb)
            gg = mean_gradient_at_null(trueG, params, xb)
            yield gf.T @ gg

    return _assemble(_compensated_sum(blocks()) / n_samples, params.sigma2)


@dataclass(frozen=True)
class MomentSet:
    I_F: np.ndarray
    I_G: np.ndarray
    C_FG: np.ndarray
    fit_map: ParamIndexMap
    true_map: ParamIndexMap


def moment_set(fitF, trueG, params: NullParams, dist, n_samples: int | None = None, seed=None) -> MomentSet:
    fitF, trueG = Family.parse(fitF), Family.parse(trueG)
    I_F = fisher_information(fitF, params, dist, n_samples, seed)
    if fitF is trueG:
        I_G = C_FG = I_F
    else:
        I_G = fisher_information(trueG, params, dist, n_samples, seed)
        C_FG = cross_moment(fitF, trueG, params, dist, n_samples, seed)
    return MomentSet(I_F, I_G, C_FG, index_map(fitF, params.p), index_map(trueG, params.p))


def information_from_gradients(gradients: np.ndarray, probs: np.ndarray, sigma2: float) -> np.ndarray:
    """Normal-model Fisher information from mean-gradient rows and their weights."""
    g = np.asarray(gradients, dtype=float)
    w = np.asarray(probs, dtype=float)
    info = _assemble((g * w[:, None]).T @ g, sigma2)
    return 0.5 * (info + info.T)


def expected_information(family, theta, dist, n_samples: int | None = None, seed=None) -> np.ndarray:
    """Fisher information of ``family`` at an arbitrary flat parameter ``theta``.

    Unlike :func:`fisher_information` this is not tied to the null point; it
    is what a Wald statistic needs at fitted estimates.
    """
    family = Family.parse(family)
    theta = np.asarray(theta, dtype=float)
    p = dist.p
    imap = index_map(family, p)
    if theta.shape != (imap.dim,):
        raise ValueError(f"{family.value} parameter vector must have length {imap.dim}")
    null = NullParams(theta[0], theta[1 : p + 1], theta[-1])

    def grad(x):
        if family is Family.DIM:
            return dim_mean_gradient(DimParams(null, theta[p + 1]), x)
        if family is Family.PIM:
            return pim_mean_gradient_at_null(null, x)
        return additive_mean_gradient(null, x)

    if isinstance(dist, Sampleable):
        if n_samples is None:
            raise ValueError("a Sampleable distribution needs n_samples for Monte Carlo")
        x = dist.sample(np.random.default_rng(seed), n_samples)
        return information_from_gradients(grad(x), np.full(n_samples, 1.0 / n_samples), null.sigma2)

    def blocks():
        for x, w in iter_support(dist):
            g = grad(x)
            yield (g * w[:, None]).T @ g

    info = _assemble(_compensated_sum(blocks()), null.sigma2)
    return 0.5 * (info + info.T)
