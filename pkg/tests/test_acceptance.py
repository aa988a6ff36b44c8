"""Acceptance suite: one PASS/FAIL line per criterion, at the agreed tolerances.

Run with ``pytest -v tests/test_acceptance.py``; the lines print even when
output capture is on.
"""

import math
import time

import numpy as np
import pytest

from dimpower.asymptotics import (
    ConstraintSpec,
    Direction,
    asymptotic_power,
    chisq_quantile,
    kl_projection_derivative,
    noncentral_chisq_sf,
    noncentrality,
    noncentrality_correct_model,
    noncentrality_for_power,
)
from dimpower.expectation import ProductBernoulli, cross_moment, fisher_information
from dimpower.mcvalidate import rejection_rate
from dimpower.models import Family, NullParams
from dimpower.scenarios import (
    DEFAULT_LEVELS,
    PowerScenario,
    PrimaryFactors,
    build_eta_from_factors,
    default_delta_grid,
    factor_grid_sweep,
    power_curve,
    power_setup,
    setup_noncentrality,
)

from oracles import kl_derivative_fd, mc_score_moment

BASE9 = NullParams.broadcast(9, 0.0, 0.5, 1.0)
DIST9 = ProductBernoulli(9, 0.5)
P3 = NullParams(0.0, [0.5, 0.5, 0.5], 1.0)
DIST3 = ProductBernoulli(3, 0.5)
FITS = (Family.DIM, Family.PIM)
PAIRS = [(f, t) for t in FITS for f in FITS]


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def pim_eta(p, f1, f2, f3):
    return build_eta_from_factors(p, PrimaryFactors(f1, f2, f3))


@pytest.fixture(scope="module")
def grid9():
    return factor_grid_sweep(9, DIST9, BASE9)


def test_c1_dim_truth_dominance(report):
    t0 = time.perf_counter()
    sc = PowerScenario(DIST9, BASE9, "dim")
    dim, pim = power_curve(sc, "dim"), power_curve(sc, "pim")
    elapsed = time.perf_counter() - t0
    nz = sc.delta_grid != 0
    gap = float(np.min(dim.power[nz] - pim.power[nz]))
    ok = bool(np.all(dim.power[nz] > pim.power[nz])) and elapsed < 30
    report(1, ok, f"min DIM-PIM power gap over Delta != 0 = {gap:.4g}; {elapsed:.2f} s")


def test_c2_correct_model_reduction(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(3, 15))
        r = int(rng.integers(1, k))
        a = rng.normal(size=(k, k))
        info = a @ a.T + k * np.eye(k)
        cs = ConstraintSpec(rng.normal(size=(r, k)), np.zeros(r))
        eta = rng.normal(size=k)
        d = Direction(eta / np.linalg.norm(eta), float(rng.normal(scale=5)))
        g = noncentrality(d, cs, info, kl_projection_derivative(info, info))
        red = noncentrality_correct_model(d, cs, info)
        worst = max(worst, abs(g - red) / max(abs(red), 1e-300))
    for truth, eta in (("dim", None), ("pim", pim_eta(9, 0.8, 0.8, 2.0))):
        sc = PowerScenario(DIST9, BASE9, truth, eta)
        g = power_curve(sc, truth, method="general").noncentrality
        red = power_curve(sc, truth, method="reduced").noncentrality
        nz = red > 0
        worst = max(worst, float(np.max(np.abs(g[nz] - red[nz]) / red[nz])))
        worst = max(worst, float(np.max(np.abs(g[~nz]))))
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-8 and elapsed < 10, f"max relative difference {worst:.2e}; {elapsed:.2f} s")


def test_c3_evenness_and_scaling(report):
    worst_even = worst_scale = 0.0
    for fit, truth in PAIRS:
        eta = None if truth is Family.DIM else pim_eta(9, 0.5, 0.8, 0.5)
        sc = PowerScenario(DIST9, BASE9, truth, eta)
        pw = power_curve(sc, fit).power
        worst_even = max(worst_even, float(np.max(np.abs(pw - pw[::-1]))))
        base = setup_noncentrality(power_setup(fit, truth, BASE9, DIST9), sc.direction, 1.3)
        for t in (0.5, 2.0, 10.0):
            scaled = power_setup(fit, truth, NullParams.broadcast(9, 0.0, 0.5, t**2), DIST9)
            worst_scale = max(worst_scale, abs(setup_noncentrality(scaled, sc.direction, 1.3 * t) / base - 1))
    ok = worst_even <= 1e-10 and worst_scale <= 1e-10
    report(3, ok, f"max |power(D) - power(-D)| = {worst_even:.2e}; max relative delta change = {worst_scale:.2e}")


def test_c4_named_cells_literal(report, grid9):
    # the cells named in the criterion: (f1, f2) = (0.2, 0.8) versus (0.8, 0.2) at f3 = 1
    a, b = grid9[(0.2, 0.8, 1.0)], grid9[(0.8, 0.2, 1.0)]
    diffs = {fit.value: float(np.max(np.abs(a[fit].power - b[fit].power))) for fit in FITS}
    ok = max(diffs.values()) <= 1e-9
    report(4, ok, f"max power difference by fit {diffs} (see the column-identity check below)")


def test_c4_companion_column_identity(report, grid9):
    # first versus third column of the f3 = 1 panel: f2 = 0.2 versus 0.8 at each f1
    worst = 0.0
    for f1 in DEFAULT_LEVELS[0]:
        for fit in FITS:
            worst = max(worst, float(np.max(np.abs(grid9[(f1, 0.2, 1.0)][fit].power - grid9[(f1, 0.8, 1.0)][fit].power))))
    report("4b", worst <= 1e-9, f"f3 = 1 columns f2 = 0.2 vs 0.8, max power difference {worst:.2e}")


def test_c5_moment_oracle(report):
    t0 = time.perf_counter()
    worst_z, count = 0.0, 0
    for params, dist in ((P3, DIST3), (BASE9, DIST9)):
        for F in Family:
            for G in Family:
                mean, se = mc_score_moment(F, G, params, dist, 100_000, 12345)
                exact = cross_moment(F, G, params, dist)
                err = np.abs(mean - exact)
                count += int(np.sum(err > 3 * se))
                random = se > 0
                worst_z = max(worst_z, float(np.max(err[random] / se[random])))
    elapsed = time.perf_counter() - t0
    ok = count == 0 and elapsed < 60
    report(5, ok, f"entries beyond 3 SE: {count}; max |z| = {worst_z:.2f}; {elapsed:.1f} s")


def test_c6_kl_derivative_oracle(report):
    worst = 0.0
    for fit, truth in PAIRS:
        analytic = kl_projection_derivative(fisher_information(fit, P3, DIST3), cross_moment(fit, truth, P3, DIST3))
        fd = kl_derivative_fd(fit, truth, P3, DIST3, h=1e-4)
        # entries that vanish analytically are compared on an absolute 1e-8 scale
        worst = max(worst, float(np.max(np.abs(fd - analytic) / np.maximum(np.abs(analytic), 1e-6))))
    report(6, worst <= 1e-2, f"max relative entry error {worst:.2e}")


def test_c7_finite_sample(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    worst_nc = 0.0
    idx = 0
    for truth in FITS:
        eta = None if truth is Family.DIM else pim_eta(3, 1.0, 1.0, 1.0)
        sc = PowerScenario(DIST3, P3, truth, eta)
        for fit in FITS:
            setup = power_setup(fit, truth, P3, DIST3)
            r = setup.constraint.r
            for Delta in (0.0, 1.0, 2.0):
                pred = asymptotic_power(setup_noncentrality(setup, sc.direction, Delta), r, sc.alpha)
                res = rejection_rate(sc, fit, 5000, 2000, seed=7000 + idx, Delta=Delta)
                idx += 1
                z = (res.rate - pred) / res.se
                worst_nc = max(worst_nc, res.nonconverged_fraction)
                ok &= abs(z) <= 3 and res.nonconverged_fraction < 0.01
                lines.append(f"{fit.value}/{truth.value} D={Delta:g}: {res.rate:.4f} vs {pred:.4f} (z={z:+.2f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    report(7, ok, "; ".join(lines) + f"; worst non-convergence {worst_nc:.3%}; {elapsed:.0f} s")


def test_c8_noncentral_chisq(report):
    from scipy import stats

    worst = 0.0
    for x in np.linspace(0.05, 40.0, 10):
        for delta in np.linspace(0.0, 100.0, 10):
            rep = stats.norm.cdf(-math.sqrt(x) + math.sqrt(delta)) + stats.norm.cdf(-math.sqrt(x) - math.sqrt(delta))
            worst = max(worst, abs(noncentral_chisq_sf(x, 1, delta) - rep))
    worst_q = 0.0
    for r in (1, 2, 3, 9, 36, 153):
        for alpha in (0.001, 0.01, 0.05, 0.1, 0.5):
            worst_q = max(worst_q, abs(noncentral_chisq_sf(chisq_quantile(r, alpha), r, 0.0) - alpha))
            d = noncentrality_for_power(0.8, r, alpha) if alpha < 0.8 else None
            if d is not None:
                worst_q = max(worst_q, abs(asymptotic_power(d, r, alpha) - 0.8))
    ok = worst <= 1e-8 and worst_q <= 1e-8
    report(8, ok, f"normal identity max error {worst:.2e}; round-trip max error {worst_q:.2e}")


def delta80(curve, alpha):
    # delta grows like Delta^2, so one nonzero grid point fixes the curve
    i = int(np.argmax(np.abs(curve.delta)))
    kappa = curve.noncentrality[i] / curve.delta[i] ** 2
    return math.sqrt(noncentrality_for_power(0.8, curve.df, alpha) / kappa)


def test_c9_p18_grid(report, grid9):
    t0 = time.perf_counter()
    grid18 = factor_grid_sweep(18, ProductBernoulli(18, 0.5), NullParams.broadcast(18, 0.0, 0.5, 1.0))
    elapsed = time.perf_counter() - t0
    nz = default_delta_grid() != 0
    corners = [(f1, f2, f3) for f1 in (0.2, 0.8) for f2 in (0.2, 0.8) for f3 in (0.5, 2.0)]
    winners = [c for c in corners if np.all(grid9[c][Family.DIM].power[nz] > grid9[c][Family.PIM].power[nz])]
    ok = len(grid18) == 27 and elapsed < 900 and bool(winners)
    parts = []
    for c in winners:
        still = bool(np.all(grid18[c][Family.DIM].power[nz] > grid18[c][Family.PIM].power[nz]))
        e9 = delta80(grid9[c][Family.PIM], 0.05) / delta80(grid9[c][Family.DIM], 0.05)
        e18 = delta80(grid18[c][Family.PIM], 0.05) / delta80(grid18[c][Family.DIM], 0.05)
        ok &= still and e18 > e9
        parts.append(f"{c}: DIM wins at p=18 {still}, Delta80 ratio PIM/DIM {e9:.3f} -> {e18:.3f}")
    report(9, ok, "; ".join(parts) + f"; p = 18 sweep {elapsed:.1f} s")
