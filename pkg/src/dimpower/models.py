"""Additive, diffuse-interaction (DIM) and pairwise-interaction (PIM) regression families.

Every family shares the normal homoscedastic error model, so a family is
fully described by its mean function.  Flat parameter vectors always use
the order ``(beta0, beta_1..beta_p, <interaction params>, sigma2)`` where the
interaction block is empty (additive), ``lambda`` (DIM) or the pairwise
coefficients ``gamma_ij`` in lexicographic ``(i, j)`` order (PIM).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


class Family(str, enum.Enum):
    ADDITIVE = "additive"
    DIM = "dim"
    PIM = "pim"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown model family {value!r}") from None


class DomainError(ValueError):
    """Raised when a mean function is evaluated outside its domain."""


def n_pairs(p: int) -> int:
    return p * (p - 1) // 2


def pair_index(p: int) -> list[tuple[int, int]]:
    """Zero-based ``(i, j)`` pairs, ``i < j``, in lexicographic order."""
    return list(combinations(range(p), 2))


@dataclass(frozen=True)
class NullParams:
    """Additive-model parameters shared by both interaction families at the null."""

    beta0: float
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.ndim != 1:
            raise ValueError("beta must be a vector")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta0", float(self.beta0))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise ValueError("beta entries must be finite and >= 0")

    @property
    def p(self) -> int:
        return self.beta.size

    @classmethod
    def broadcast(cls, p: int, beta0: float, beta, sigma2: float) -> "NullParams":
        beta = np.asarray(beta, dtype=float)
        if beta.ndim == 0:
            beta = np.full(p, float(beta))
        if beta.size != p:
            raise ValueError(f"beta has length {beta.size}, expected p = {p}")
        return cls(beta0, beta, sigma2)

    def flat(self, family: "Family | str") -> np.ndarray:
        """Null point in the flat parameter space of ``family``."""
        family = Family.parse(family)
        if family is Family.ADDITIVE:
            inter = []
        elif family is Family.DIM:
            inter = [1.0]
        else:
            inter = [0.0] * n_pairs(self.p)
        return np.concatenate([[self.beta0], self.beta, inter, [self.sigma2]])


@dataclass(frozen=True)
class DimParams:
    null: NullParams
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")


@dataclass(frozen=True)
class PimParams:
    null: NullParams
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "gamma", gamma)
        m = n_pairs(self.null.p)
        if gamma.shape != (m,):
            raise ValueError(f"gamma must have length p(p-1)/2 = {m}, got {gamma.size}")


@dataclass(frozen=True)
class ParamIndexMap:
    family: Family
    p: int
    names: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        names = ["beta0"] + [f"beta{i + 1}" for i in range(self.p)]
        if self.family is Family.DIM:
            names.append("lambda")
        elif self.family is Family.PIM:
            names += [f"gamma{i + 1}_{j + 1}" for i, j in pair_index(self.p)]
        names.append("sigma2")
        object.__setattr__(self, "names", tuple(names))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def interaction(self) -> slice:
        """Slice of the interaction block within the flat vector."""
        return slice(self.p + 1, self.dim - 1)

    @property
    def mean(self) -> slice:
        return slice(0, self.dim - 1)

    @property
    def sigma2(self) -> int:
        return self.dim - 1

    def index(self, name: str) -> int:
        return self.names.index(name)


def index_map(family: "Family | str", p: int) -> ParamIndexMap:
    return ParamIndexMap(Family.parse(family), p)


def _xlogx(t: np.ndarray) -> np.ndarray:
    # 0 log 0 := 0
    t = np.asarray(t, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, t * np.log(safe), 0.0)


def _terms(beta: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != beta.size:
        raise ValueError(f"covariate dimension {x.shape[-1]} != p = {beta.size}")
    t = x * beta
    if np.any(t < 0):
        raise DomainError("DIM requires beta_i * x_i >= 0 for every i")
    return t


def dim_mean(params: DimParams, x) -> np.ndarray | float:
    """DIM regression mean; ``x`` may be one covariate vector or an (n, p) array."""
    t = _terms(params.null.beta, x)
    lam = params.lam
    if lam == 1.0:
        inner = t.sum(axis=-1)
    else:
        # factor out the largest term so t**lam cannot under/overflow
        tmax = t.max(axis=-1, keepdims=True)
        scale = np.where(tmax > 0, tmax, 1.0)
        ratio = t / scale
        powered = np.where(ratio > 0, ratio ** lam, 0.0)
        inner = (scale[..., 0]) * powered.sum(axis=-1) ** (1.0 / lam)
    out = params.null.beta0 + inner
    return float(out) if np.ndim(out) == 0 else out


def pim_mean(params: PimParams, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    beta = params.null.beta
    if x.shape[-1] != beta.size:
        raise ValueError(f"covariate dimension {x.shape[-1]} != p = {beta.size}")
    out = params.null.beta0 + x @ beta + pairwise_products(x) @ params.gamma
    return float(out) if np.ndim(out) == 0 else out


def additive_mean(params: NullParams, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.p:
        raise ValueError(f"covariate dimension {x.shape[-1]} != p = {params.p}")
    out = params.beta0 + x @ params.beta
    return float(out) if np.ndim(out) == 0 else out


def pairwise_products(x) -> np.ndarray:
    """Columns ``x_i x_j`` for ``i < j`` in lexicographic order."""
    x = np.asarray(x, dtype=float)
    i, j = np.triu_indices(x.shape[-1], k=1)
    return x[..., i] * x[..., j]


def dim_mean_gradient(params: DimParams, x) -> np.ndarray:
    """Gradient of the DIM mean in ``(beta0, beta_1..beta_p, lambda)`` at any lambda.

    Needed to evaluate expected information at fitted (non-null) estimates.
    At ``lambda == 1`` it agrees with :func:`dim_mean_gradient_at_null`.
    """
    if params.lam == 1.0:
        return dim_mean_gradient_at_null(params.null, x)
    beta = params.null.beta
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    t = _terms(beta, x2)
    lam = params.lam
    pos = t > 0
    tsafe = np.where(pos, t, 1.0)
    tmax = t.max(axis=-1, keepdims=True)
    scale = np.where(tmax > 0, tmax, 1.0)
    ratio = np.where(pos, t / scale, 0.0)
    rl = np.where(pos, ratio ** lam, 0.0)
    a = rl.sum(axis=-1, keepdims=True)  # inner sum over scale**lam
    active = a[:, 0] > 0
    asafe = np.where(a > 0, a, 1.0)
    m = scale * asafe ** (1.0 / lam)  # the braced term
    # d m / d beta_i = (t_i / m)^(lam-1) x_i
    share = np.where(pos, np.where(pos, t, m) / m, 1.0) ** (lam - 1.0)
    share = np.where(pos, share, 0.0)
    dbeta = share * x2
    w = rl / asafe
    logs = np.where(pos, np.log(tsafe), 0.0)
    dlam = m[:, 0] / lam * ((w * logs).sum(axis=-1) - np.log(m[:, 0]))
    dlam = np.where(active, dlam, 0.0)
    out = np.column_stack([np.ones(len(x2)), dbeta, dlam])
    return out[0] if np.ndim(x) == 1 else out


def dim_mean_gradient_at_null(params: NullParams, x) -> np.ndarray:
    """``(1, x_1..x_p, d mu/d lambda)`` at ``lambda = 1``.

    The lambda component is ``-S log S + sum_i t_i log t_i`` with
    ``t_i = beta_i x_i`` and ``S = sum t_i``; ``0 log 0`` is taken as 0.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    t = _terms(params.beta, x2)
    dlam = _xlogx(t).sum(axis=-1) - _xlogx(t.sum(axis=-1))
    out = np.column_stack([np.ones(len(x2)), x2, dlam])
    return out[0] if np.ndim(x) == 1 else out


def pim_mean_gradient_at_null(params: NullParams, x) -> np.ndarray:
    # the PIM mean is linear in its parameters, so this holds at any gamma
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    if x2.shape[-1] != params.p:
        raise ValueError(f"covariate dimension {x2.shape[-1]} != p = {params.p}")
    out = np.column_stack([np.ones(len(x2)), x2, pairwise_products(x2)])
    return out[0] if np.ndim(x) == 1 else out


def additive_mean_gradient(params: NullParams, x) -> np.ndarray:
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    if x2.shape[-1] != params.p:
        raise ValueError(f"covariate dimension {x2.shape[-1]} != p = {params.p}")
    out = np.column_stack([np.ones(len(x2)), x2])
    return out[0] if np.ndim(x) == 1 else out


def mean_gradient_at_null(family: "Family | str", params: NullParams, x) -> np.ndarray:
    family = Family.parse(family)
    if family is Family.DIM:
        return dim_mean_gradient_at_null(params, x)
    if family is Family.PIM:
        return pim_mean_gradient_at_null(params, x)
    return additive_mean_gradient(params, x)


def score_at_null(family: "Family | str", params: NullParams, x, y) -> np.ndarray:
    """Score of the normal log-density in the flat parameters, at the null point.

    Vectorised: with ``x`` of shape (n, p) and ``y`` of shape (n,), returns (n, k).
    """
    g = mean_gradient_at_null(family, params, x)
    resid = np.asarray(y, dtype=float) - additive_mean(params, x)
    s2 = params.sigma2
    mean_part = (resid / s2)[..., None] * g
    var_part = resid**2 / (2 * s2**2) - 1 / (2 * s2)
    return np.concatenate([mean_part, np.asarray(var_part)[..., None]], axis=-1)


def mean_function(family: "Family | str", theta, p: int):
    """Return ``x -> E(Y|x)`` for a flat parameter vector ``theta`` of ``family``."""
    family = Family.parse(family)
    theta = np.asarray(theta, dtype=float)
    imap = index_map(family, p)
    if theta.shape != (imap.dim,):
        raise ValueError(f"{family.value} parameter vector must have length {imap.dim}")
    null = NullParams(theta[0], theta[1 : p + 1], theta[-1])
    if family is Family.DIM:
        dp = DimParams(null, theta[p + 1])
        return lambda x: dim_mean(dp, x)
    if family is Family.PIM:
        pp = PimParams(null, theta[imap.interaction])
        return lambda x: pim_mean(pp, x)
    return lambda x: additive_mean(null, x)


def log_density(family: "Family | str", theta, x, y) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    mu = mean_function(family, theta, x.shape[-1])(x)
    s2 = theta[-1]
    return -0.5 * np.log(2 * np.pi * s2) - (np.asarray(y) - mu) ** 2 / (2 * s2)
