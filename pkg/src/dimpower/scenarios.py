"""Power-comparison designs: constraints, interaction directions, curves and factor grids."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from .expectation import moment_set
from .models import Family, NullParams, index_map, n_pairs

DEFAULT_LEVELS = ((0.2, 0.5, 0.8), (0.2, 0.5, 0.8), (0.5, 1.0, 2.0))
DEFAULT_ALPHA = 0.05


def default_delta_grid(lo: float = -30.0, hi: float = 30.0, steps: int = 61) -> np.ndarray:
    return np.linspace(lo, hi, steps)


class ScenarioError(RuntimeError):
    """Numerical failure while evaluating a scenario, with the scenario attached."""


@dataclass(frozen=True)
class PrimaryFactors:
    f1: float  # share of nonzero entries
    f2: float  # share of nonzero entries that are positive
    f3: float  # positive magnitude / negative magnitude

    def __post_init__(self):
        if not 0 < self.f1 <= 1:
            raise ValueError(f"f1 must lie in (0, 1], got {self.f1}")
        if not 0 <= self.f2 <= 1:
            raise ValueError(f"f2 must lie in [0, 1], got {self.f2}")
        if not self.f3 > 0:
            raise ValueError(f"f3 must be > 0, got {self.f3}")


def round_count(x: float, rule: str = "half_away") -> int:
    if rule == "half_away":
        # tolerance absorbs binary representation error such as 0.3 * 5
        return int(math.floor(x + 0.5 + 1e-9))
    if rule == "half_even":
        return int(round(x))
    raise ValueError(f"unknown rounding rule {rule!r}")


def build_constraint(fit, p: int) -> asy.ConstraintSpec:
    """Selector of the interaction block: ``lambda = 1`` for DIM, ``gamma = 0`` for PIM."""
    fit = Family.parse(fit)
    if p < 2:
        raise ValueError("an interaction test needs p >= 2")
    if fit is Family.ADDITIVE:
        raise ValueError("the additive family has no interaction parameters to test")
    imap = index_map(fit, p)
    cols = np.arange(imap.dim)[imap.interaction]
    C = np.zeros((cols.size, imap.dim))
    C[np.arange(cols.size), cols] = 1.0
    zeta0 = np.ones(1) if fit is Family.DIM else np.zeros(cols.size)
    return asy.ConstraintSpec(C, zeta0)


def build_eta_from_factors(p: int, factors: PrimaryFactors, rounding: str = "half_away") -> np.ndarray:
    """Unit pairwise-coefficient direction laid out as (0..0, +..+, -..-)."""
    m = n_pairs(p)
    k = round_count(factors.f1 * m, rounding)
    if k < 1:
        raise ValueError(f"f1 = {factors.f1} leaves no nonzero entry among {m} pairs")
    k_pos = round_count(factors.f2 * k, rounding)
    k_neg = k - k_pos
    c = 1.0 / math.sqrt(k_pos * factors.f3**2 + k_neg)
    eta = np.zeros(m)
    eta[m - k : m - k + k_pos] = factors.f3 * c
    eta[m - k_neg :] = -c
    return eta


def embed_direction(truth, p: int, eta_interaction) -> np.ndarray:
    """Place an interaction-block direction into the true family's flat parameter space."""
    imap = index_map(truth, p)
    full = np.zeros(imap.dim)
    full[imap.interaction] = np.atleast_1d(np.asarray(eta_interaction, dtype=float))
    return full


@dataclass(frozen=True)
class PowerScenario:
    dist: object
    nullparams: NullParams
    truth: Family
    eta: np.ndarray = None  # interaction block; None means the DIM scalar 1
    alpha: float = DEFAULT_ALPHA
    delta_grid: np.ndarray = field(default_factory=default_delta_grid)

    def __post_init__(self):
        truth = Family.parse(self.truth)
        if truth is Family.ADDITIVE:
            raise ValueError("the true family must be DIM or PIM")
        object.__setattr__(self, "truth", truth)
        p = self.nullparams.p
        if self.eta is None:
            if truth is Family.PIM:
                raise ValueError("a PIM truth needs an interaction direction eta")
            eta = np.ones(1)
        else:
            eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        expected = 1 if truth is Family.DIM else n_pairs(p)
        if eta.shape != (expected,):
            raise ValueError(f"eta must have length {expected} for a {truth.value} truth")
        if abs(np.linalg.norm(eta) - 1) > 1e-12:
            raise ValueError("eta must have unit length")
        grid = np.atleast_1d(np.asarray(self.delta_grid, dtype=float))
        if grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("delta_grid must be nonempty and strictly increasing")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.dist.p != p:
            raise ValueError("covariate dimension does not match beta")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "delta_grid", grid)

    @property
    def p(self) -> int:
        return self.nullparams.p

    @property
    def direction(self) -> np.ndarray:
        return embed_direction(self.truth, self.p, self.eta)


@dataclass(frozen=True)
class PowerSetup:
    """Everything in a power computation that does not depend on eta or Delta."""

    fit: Family
    truth: Family
    constraint: asy.ConstraintSpec
    I_F: np.ndarray
    dtheta_domega: np.ndarray
    correct: bool


def power_setup(fit, truth, nullparams: NullParams, dist, method: str = "auto") -> PowerSetup:
    """Moments and KL-projection derivative for one (fit, truth) pair.

    ``method="general"`` forces the misspecified-model path even when
    ``fit == truth``; ``"auto"`` uses the reduced formula in that case.
    """
    fit, truth = Family.parse(fit), Family.parse(truth)
    if method not in ("auto", "general", "reduced"):
        raise ValueError(f"unknown method {method!r}")
    if method == "reduced" and fit is not truth:
        raise ValueError("the reduced formula only applies when fit == truth")
    ms = moment_set(fit, truth, nullparams, dist)
    correct = fit is truth and method != "general"
    dth = np.eye(ms.I_F.shape[0]) if correct else asy.kl_projection_derivative(ms.I_F, ms.C_FG)
    return PowerSetup(fit, truth, build_constraint(fit, nullparams.p), ms.I_F, dth, correct)


def setup_noncentrality(setup: PowerSetup, eta_full: np.ndarray, Delta: float) -> float:
    d = asy.Direction(eta_full, Delta)
    if setup.correct:
        return asy.noncentrality_correct_model(d, setup.constraint, setup.I_F)
    return asy.noncentrality(d, setup.constraint, setup.I_F, setup.dtheta_domega)


@dataclass(frozen=True)
class PowerCurve:
    fit: Family
    delta: np.ndarray
    power: np.ndarray
    noncentrality: np.ndarray
    df: int

    def rows(self):
        return list(zip(self.delta.tolist(), self.power.tolist()))


def curve_from_setup(setup: PowerSetup, scenario: PowerScenario) -> PowerCurve:
    eta = scenario.direction
    crit = asy.chisq_quantile(setup.constraint.r, scenario.alpha)
    nc = np.array([setup_noncentrality(setup, eta, D) for D in scenario.delta_grid])
    power = np.array([asy.noncentral_chisq_sf(crit, setup.constraint.r, d) for d in nc])
    return PowerCurve(setup.fit, scenario.delta_grid.copy(), power, nc, setup.constraint.r)


def power_curve(scenario: PowerScenario, fit, method: str = "auto") -> PowerCurve:
    fit = Family.parse(fit)
    try:
        setup = power_setup(fit, scenario.truth, scenario.nullparams, scenario.dist, method)
        return curve_from_setup(setup, scenario)
    except asy.SingularityError as exc:
        raise ScenarioError(
            f"{fit.value}-fit power under {scenario.truth.value} truth "
            f"(p={scenario.p}, beta0={scenario.nullparams.beta0}, "
            f"sigma2={scenario.nullparams.sigma2}, dist={scenario.dist!r}): {exc}"
        ) from exc


def delta_for_power(setup: PowerSetup, eta_full: np.ndarray, power: float, alpha: float) -> float:
    """Smallest ``|Delta|`` reaching ``power``; noncentrality grows like ``Delta**2``."""
    kappa = setup_noncentrality(setup, eta_full, 1.0)
    if kappa <= 0:
        return math.inf
    return math.sqrt(asy.noncentrality_for_power(power, setup.constraint.r, alpha) / kappa)


def factor_grid_sweep(
    p: int,
    dist,
    nullparams: NullParams,
    alpha: float = DEFAULT_ALPHA,
    delta_grid=None,
    levels=DEFAULT_LEVELS,
    fits=(Family.DIM, Family.PIM),
    rounding: str = "half_away",
) -> dict[tuple[float, float, float], dict[Family, PowerCurve]]:
    """Power curves under PIM truth for every combination of primary-factor levels.

    The moment matrices do not depend on eta, so they are built once per fit.
    """
    if nullparams.p != p:
        raise ValueError("p does not match the null parameters")
    if any(len(lv) == 0 for lv in levels):
        raise ValueError("every factor needs at least one level")
    grid = default_delta_grid() if delta_grid is None else delta_grid
    setups = {}
    for fit in fits:
        fit = Family.parse(fit)
        try:
            setups[fit] = power_setup(fit, Family.PIM, nullparams, dist)
        except asy.SingularityError as exc:
            raise ScenarioError(f"{fit.value}-fit setup under PIM truth (p={p}): {exc}") from exc
    out = {}
    for f1, f2, f3 in itertools.product(*levels):
        eta = build_eta_from_factors(p, PrimaryFactors(f1, f2, f3), rounding)
        sc = PowerScenario(dist, nullparams, Family.PIM, eta, alpha, grid)
        out[(f1, f2, f3)] = {fit: curve_from_setup(s, sc) for fit, s in setups.items()}
    return out
