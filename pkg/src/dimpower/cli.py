"""Batch front end: read a key=value run file, compute, write a CSV table."""

from __future__ import annotations

import argparse
import dataclasses
import io
import os
import sys

import numpy as np

from . import asymptotics as asy
from . import mcvalidate as mc
from .expectation import ProductBernoulli
from .models import Family, NullParams
from .scenarios import (
    DEFAULT_LEVELS,
    PowerScenario,
    PrimaryFactors,
    ScenarioError,
    build_eta_from_factors,
    factor_grid_sweep,
    power_curve,
)

MODES = ("curve", "grid", "mc")
HEADERS = {
    "curve": "delta,power_dim_fit,power_pim_fit",
    "grid": "f1,f2,f3,delta,fit,power",
    "mc": "delta,fit,n,reps,rate,se,nonconverged",
}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    mode: str
    p: int
    q: tuple
    beta0: float
    beta: tuple
    sigma2: float
    alpha: float
    truth: Family | None
    fits: tuple
    factors: PrimaryFactors | None
    levels: tuple
    delta_min: float
    delta_max: float
    delta_steps: int
    n: int
    reps: int
    seed: int
    rounding: str
    out: str | None
    plot_script: str | None

    @property
    def nullparams(self) -> NullParams:
        beta = self.beta[0] if len(self.beta) == 1 else self.beta
        return NullParams.broadcast(self.p, self.beta0, beta, self.sigma2)

    @property
    def dist(self) -> ProductBernoulli:
        return ProductBernoulli(self.p, self.q[0] if len(self.q) == 1 else self.q)

    @property
    def delta_grid(self) -> np.ndarray:
        return np.linspace(self.delta_min, self.delta_max, self.delta_steps)


def _number(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise ValueError(f"expected {'an integer' if kind is int else 'a number'}, got {text!r}") from None
        if kind is float and not np.isfinite(v):
            raise ValueError(f"must be finite, got {text!r}")
        return v

    return conv


def _numbers(text):
    parts = [t for t in text.replace(",", " ").split() if t]
    if not parts:
        raise ValueError("expected one or more numbers")
    return tuple(_number(float)(t) for t in parts)


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}, got {text!r}")
        return text

    return conv


def _text(text):
    if not text:
        raise ValueError("must not be empty")
    return text


KEYS = {
    "mode": _choice(*MODES),
    "p": _number(int),
    "covariates": _choice("bernoulli"),
    "q": _numbers,
    "beta0": _number(float),
    "beta": _numbers,
    "sigma2": _number(float),
    "alpha": _number(float),
    "truth": _choice("dim", "pim"),
    "fit": _choice("dim", "pim", "both"),
    "f1": _number(float),
    "f2": _number(float),
    "f3": _number(float),
    "f1_levels": _numbers,
    "f2_levels": _numbers,
    "f3_levels": _numbers,
    "delta_min": _number(float),
    "delta_max": _number(float),
    "delta_steps": _number(int),
    "n": _number(int),
    "reps": _number(int),
    "seed": _number(int),
    "rounding": _choice("half_away", "half_even"),
    "out": _text,
    "plot_script": _text,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run file; every error names the key and, where known, its line."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        lines[key] = lineno

    def fail(key, msg):
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{key}: {msg}")

    def need(key):
        if key not in values:
            raise ConfigError(f"{key}: required key is missing")
        return values[key]

    mode = need("mode")
    p = need("p")
    if p < 1:
        fail("p", f"must be >= 1, got {p}")
    if mode == "mc" and p > 24:
        fail("p", "mc mode needs exact expected information, so p <= 24")
    q = values.get("q", (0.5,))
    if len(q) not in (1, p):
        fail("q", f"give 1 or p = {p} values, got {len(q)}")
    if any(not 0 < v < 1 for v in q):
        fail("q", "Bernoulli probabilities must lie in (0, 1)")
    beta0 = values.get("beta0", 0.0)
    beta = need("beta")
    if len(beta) not in (1, p):
        fail("beta", f"give 1 or p = {p} values, got {len(beta)}")
    if any(b < 0 for b in beta):
        fail("beta", "entries must be >= 0")
    sigma2 = values.get("sigma2", 1.0)
    if not sigma2 > 0:
        fail("sigma2", f"must be > 0, got {sigma2}")
    alpha = values.get("alpha", 0.05)
    if not 0 < alpha < 1:
        fail("alpha", f"must lie in (0, 1), got {alpha}")

    truth = values.get("truth")
    if mode == "grid":
        truth = truth or "pim"
        if truth != "pim":
            fail("truth", "grid mode sweeps PIM interaction directions, so truth must be pim")
    elif truth is None:
        need("truth")
    truth = Family.parse(truth)
    fit = values.get("fit", "both")
    fits = (Family.DIM, Family.PIM) if fit == "both" else (Family.parse(fit),)
    if p < 2 and (Family.PIM in fits or truth is Family.PIM):
        fail("p", "pairwise interactions need p >= 2")

    factors = None
    if truth is Family.PIM and mode != "grid":
        try:
            factors = PrimaryFactors(need("f1"), need("f2"), need("f3"))
            build_eta_from_factors(p, factors, values.get("rounding", "half_away"))
        except ValueError as exc:
            key = next((k for k in ("f1", "f2", "f3") if k in str(exc)), "f1")
            fail(key, str(exc))
    else:
        for key in ("f1", "f2", "f3"):
            if key in values:
                fail(key, "only used when truth = pim in curve or mc mode")
    levels = tuple(values.get(f"f{i + 1}_levels", DEFAULT_LEVELS[i]) for i in range(3))
    for i, lv in enumerate(levels):
        key = f"f{i + 1}_levels"
        if mode != "grid" and key in values:
            fail(key, "only used in grid mode")
        if len(set(lv)) != len(lv):
            fail(key, "levels must be distinct")
        lo_ok = (lambda v: 0 < v <= 1, lambda v: 0 <= v <= 1, lambda v: v > 0)[i]
        if not all(lo_ok(v) for v in lv):
            fail(key, ("levels must lie in (0, 1]", "levels must lie in [0, 1]", "levels must be > 0")[i])
    if mode == "grid":
        for a in levels[0]:
            for b in levels[1]:
                for c in levels[2]:
                    try:
                        build_eta_from_factors(p, PrimaryFactors(a, b, c), values.get("rounding", "half_away"))
                    except ValueError as exc:
                        fail("f1_levels", f"cell ({a}, {b}, {c}): {exc}")

    dmin = values.get("delta_min", -30.0)
    dmax = values.get("delta_max", 30.0)
    steps = values.get("delta_steps", 61)
    if steps < 1:
        fail("delta_steps", f"must be >= 1, got {steps}")
    if steps == 1 and dmin != dmax:
        fail("delta_steps", "a single step needs delta_min = delta_max")
    if steps > 1 and not dmax > dmin:
        fail("delta_max", "must exceed delta_min")

    n = values.get("n", 5000)
    reps = values.get("reps", 2000)
    seed = values.get("seed", 0)
    for key in ("n", "reps", "seed"):
        if mode != "mc" and key in values:
            fail(key, "only used in mc mode")
    if mode == "mc":
        if reps < 100:
            fail("reps", f"must be >= 100, got {reps}")
        kmax = max(p + 3 if f is Family.DIM else p * (p + 1) // 2 + 2 for f in fits)
        if n <= kmax:
            fail("n", f"must exceed the {kmax} fitted parameters, got {n}")
        if seed < 0 or seed >= 2**64:
            fail("seed", "must be an unsigned 64-bit integer")
        if truth is Family.DIM:
            lam_min = 1 + min(dmin, 0.0) / np.sqrt(n)
            if not lam_min > 0:
                fail("delta_min", f"gives lambda_n = {lam_min:.6g} <= 0 at n = {n}")
    if "plot_script" in values and mode == "mc":
        fail("plot_script", "only available in curve and grid mode")

    return RunConfig(
        mode, p, q, beta0, beta, sigma2, alpha, truth, fits, factors, levels,
        dmin, dmax, steps, n, reps, seed, values.get("rounding", "half_away"),
        values.get("out"), values.get("plot_script"),
    )


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _scenario(cfg: RunConfig) -> PowerScenario:
    eta = None
    if cfg.truth is Family.PIM:
        eta = build_eta_from_factors(cfg.p, cfg.factors, cfg.rounding)
    return PowerScenario(cfg.dist, cfg.nullparams, cfg.truth, eta, cfg.alpha, cfg.delta_grid)


def compute_rows(cfg: RunConfig, workers: int = 1) -> list[list]:
    """Table rows for ``cfg``; fits not requested in curve mode are left empty."""
    if cfg.mode == "curve":
        sc = _scenario(cfg)
        cols = {f: power_curve(sc, f).power for f in cfg.fits}
        empty = [""] * len(sc.delta_grid)
        dim = cols.get(Family.DIM, empty)
        pim = cols.get(Family.PIM, empty)
        return [[d, a, b] for d, a, b in zip(sc.delta_grid, dim, pim)]
    if cfg.mode == "grid":
        sweep = factor_grid_sweep(
            cfg.p, cfg.dist, cfg.nullparams, cfg.alpha, cfg.delta_grid, cfg.levels, cfg.fits, cfg.rounding
        )
        rows = []
        for (f1, f2, f3), curves in sweep.items():
            for i, d in enumerate(cfg.delta_grid):
                for fit in cfg.fits:
                    rows.append([f1, f2, f3, d, fit.value, curves[fit].power[i]])
        return rows
    sc = _scenario(cfg)
    rows = []
    for d in cfg.delta_grid:
        for fit in cfg.fits:
            res = mc.rejection_rate(sc, fit, cfg.n, cfg.reps, cfg.seed, Delta=float(d), workers=workers)
            rows.append([d, fit.value, cfg.n, cfg.reps, res.rate, res.se, res.nonconverged])
    return rows


def render_csv(mode: str, rows) -> str:
    buf = io.StringIO()
    buf.write(HEADERS[mode] + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


PLOT_GRID = '''import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
rows = list(csv.DictReader(open(path)))
f1s = sorted({{float(r["f1"]) for r in rows}})
f2s = sorted({{float(r["f2"]) for r in rows}})
f3s = sorted({{float(r["f3"]) for r in rows}})
for f3 in f3s:
    fig, axes = plt.subplots(len(f1s), len(f2s), sharex=True, sharey=True, squeeze=False, figsize=(9, 9))
    for i, f1 in enumerate(f1s):
        for j, f2 in enumerate(f2s):
            ax = axes[i][j]
            for fit, style in (("dim", "-"), ("pim", "--")):
                pts = [(float(r["delta"]), float(r["power"])) for r in rows
                       if r["fit"] == fit and float(r["f1"]) == f1 and float(r["f2"]) == f2 and float(r["f3"]) == f3]
                if pts:
                    ax.plot(*zip(*pts), style, color="k", label=fit.upper() + " fit")
            ax.set_ylim(0, 1)
            ax.set_title(f"f1={{f1}}, f2={{f2}}", fontsize=9)
    axes[0][0].legend(fontsize=8)
    fig.suptitle(f"f3 = {{f3}}")
    fig.savefig(f"power_grid_f3_{{f3}}.png", dpi=120)
'''

PLOT_CURVE = '''import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
rows = list(csv.DictReader(open(path)))
delta = [float(r["delta"]) for r in rows]
for col, style in (("power_dim_fit", "-"), ("power_pim_fit", "--")):
    if rows and rows[0][col]:
        plt.plot(delta, [float(r[col]) for r in rows], style, color="k", label=col)
plt.ylim(0, 1)
plt.xlabel("Delta")
plt.ylabel("power")
plt.legend()
plt.savefig("power_curve.png", dpi=120)
'''


def plot_script(mode: str, csv_path: str | None) -> str:
    template = PLOT_GRID if mode == "grid" else PLOT_CURVE
    return template.format(csv=csv_path or "power.csv")


def run(cfg: RunConfig, out: str | None = None, workers: int = 1, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        text = render_csv(cfg.mode, compute_rows(cfg, workers))
    except (ScenarioError, asy.SingularityError, mc.ConvergenceFailure, mc.FitError) as exc:
        print(f"dimpower: numerical failure in {cfg.mode} mode: {exc}", file=stderr)
        return 2
    except ValueError as exc:
        print(f"dimpower: invalid configuration: {exc}", file=stderr)
        return 1
    target = out or cfg.out
    if target:
        with open(target, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    if cfg.plot_script:
        with open(cfg.plot_script, "w") as fh:
            fh.write(plot_script(cfg.mode, target))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="dimpower", description=__doc__)
    ap.add_argument("--config", required=True, help="key=value run file")
    ap.add_argument("--out", help="CSV path (default: stdout, or the run file's out key)")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes for mc mode")
    ap.add_argument("--seed", type=int, help="master seed for mc mode, overriding the run file")
    args = ap.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        cfg = parse_config(text)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except (OSError, ConfigError) as exc:
        print(f"dimpower: {exc}", file=sys.stderr)
        return 1
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
