"""Local-alternative power of a Wald test under a possibly misspecified fitted model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special

MAX_CONDITION = 1e12
SERIES_TOL = 1e-12


class SingularityError(ArithmeticError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


@dataclass(frozen=True)
class ConstraintSpec:
    """Linear null hypothesis ``C theta = zeta0`` with ``C`` of full row rank."""

    C: np.ndarray
    zeta0: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        zeta0 = np.atleast_1d(np.asarray(self.zeta0, dtype=float))
        if zeta0.shape != (C.shape[0],):
            raise ValueError("zeta0 must have one entry per row of C")
        sv = np.linalg.svd(C, compute_uv=False)
        if sv.size == 0 or sv.min() <= 1e-10 * sv.max():
            raise ValueError("constraint matrix C must have full row rank")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "zeta0", zeta0)

    @property
    def r(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Direction:
    """Unit direction ``eta`` in the true family's parameter space and its scale ``Delta``."""

    eta: np.ndarray
    Delta: float = 1.0

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if abs(np.linalg.norm(eta) - 1.0) > 1e-12:
            raise ValueError(f"eta must have unit length, got norm {np.linalg.norm(eta)!r}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "Delta", float(self.Delta))


def spd_solve(A: np.ndarray, B: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A`` with a conditioning guard."""
    A = np.asarray(A, dtype=float)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularityError(f"{what} is singular to working precision (condition number {cond:.3e})")
    try:
        factor = linalg.cho_factor(A)
    except linalg.LinAlgError:
        raise SingularityError(f"{what} is not positive definite (condition number {cond:.3e})") from None
    return linalg.cho_solve(factor, B)


def kl_projection_derivative(I_F: np.ndarray, C_FG: np.ndarray) -> np.ndarray:
    """Sensitivity of the KL-closest fitted parameter to the true parameter at the null.

    Implicit differentiation of ``E_omega s_F(theta_*(omega)) = 0`` gives
    ``I_F^{-1} E[s_F s_G^T]``.
    """
    return spd_solve(I_F, C_FG, "fitted-family Fisher information")


def noncentrality(direction: Direction, cs: ConstraintSpec, I_F: np.ndarray, dtheta_domega: np.ndarray) -> float:
    shift = direction.Delta * (cs.C @ (dtheta_domega @ direction.eta))
    middle = cs.C @ spd_solve(I_F, cs.C.T, "fitted-family Fisher information")
    delta = float(shift @ spd_solve(middle, shift, "C I_F^-1 C^T"))
    return max(delta, 0.0)


def noncentrality_correct_model(direction: Direction, cs: ConstraintSpec, I_F: np.ndarray) -> float:
    """Reduced noncentrality when the fitted family is the true family."""
    ceta = cs.C @ direction.eta
    middle = cs.C @ spd_solve(I_F, cs.C.T, "fitted-family Fisher information")
    return max(direction.Delta**2 * float(ceta @ spd_solve(middle, ceta, "C I_F^-1 C^T")), 0.0)


def _check_sf_args(x: float, r: int, delta: float):
    if not x >= 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if int(r) != r or r < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {r}")
    if not delta >= 0:
        raise ValueError(f"noncentrality must be >= 0, got {delta}")


def noncentral_chisq_sf(x: float, r: int, delta: float) -> float:
    """``P(chi2_r(delta) > x)`` as a Poisson(delta/2) mixture of central tails.

    Summation starts at the Poisson mode and walks outward until the
    Poisson mass not yet visited is below ``SERIES_TOL``; since every central
    tail is at most 1 that bounds the truncation error.
    """
    _check_sf_args(x, r, delta)
    lam = delta / 2.0
    if lam == 0:
        return float(special.gammaincc(r / 2.0, x / 2.0))
    mode = int(math.floor(lam))

    def weight(k):
        if k == 0:
            return math.exp(-lam)
        return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))

    def tail(k):
        return special.gammaincc(r / 2.0 + k, x / 2.0)

    terms, masses = [], []
    lo, hi = mode - 1, mode + 1
    w = weight(mode)
    terms.append(w * tail(mode))
    masses.append(w)
    w_lo = w * mode / lam if mode > 0 else 0.0
    w_hi = w * lam / (mode + 1)
    while 1.0 - math.fsum(masses) >= SERIES_TOL:
        grew = False
        if lo >= 0 and w_lo > 0:
            terms.append(w_lo * tail(lo))
            masses.append(w_lo)
            w_lo = w_lo * lo / lam if lo > 0 else 0.0
            lo -= 1
            grew = True
        if w_hi > 0:
            terms.append(w_hi * tail(hi))
            masses.append(w_hi)
            hi += 1
            w_hi = w_hi * lam / hi
            grew = True
        if not grew:
            break
    return min(max(math.fsum(terms), 0.0), 1.0)


def chisq_quantile(r: int, alpha: float) -> float:
    """Upper ``alpha`` quantile of the central chi-square with ``r`` degrees of freedom."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if int(r) != r or r < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {r}")
    a = r / 2.0

    def f(x):
        return special.gammaincc(a, x / 2.0) - alpha

    hi = max(2.0 * r, 1.0)
    while f(hi) > 0:
        hi *= 2.0
    return optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def asymptotic_power(delta: float, r: int, alpha: float) -> float:
    if not delta >= 0:
        raise ValueError(f"noncentrality must be >= 0, got {delta}")
    return noncentral_chisq_sf(chisq_quantile(r, alpha), r, delta)


def noncentrality_for_power(power: float, r: int, alpha: float) -> float:
    """Smallest noncentrality giving the requested asymptotic power."""
    if not alpha < power < 1:
        raise ValueError("power must lie strictly between alpha and 1")
    crit = chisq_quantile(r, alpha)

    def f(d):
        return noncentral_chisq_sf(crit, r, d) - power

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return optimize.brentq(f, 0.0, hi, xtol=1e-12)
