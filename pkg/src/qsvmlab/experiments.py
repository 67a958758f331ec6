"""Scaling experiments and numeric theory checks.

Each experiment is a pure function of a flat config and a master seed. Every
random quantity comes from a named substream ``(master_seed, experiment, ...)``
so results are identical at any thread count. Outputs:

* ``results.csv``: one raw row per (grid point, repetition), fixed column order
* ``fit.json``: exponents with standard errors, excluded-run counts, config echo
* ``plot.svg``: optional log-log chart of the main fit
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import NAME as BACKEND
from .approx_qsvm import (
    SpsaSchedule,
    TrainConfig,
    calibrate_schedule,
    init_model,
    max_decision_gap,
    reference_refine,
    train,
)
from .datagen import DataGenConfig, generate
from .dual_solver import NonConvexError, daniel_bound_check, solve_dual
from .kernel import KernelAccess, ShotConfig, emulate_kernel_matrix, exact_gram, spectral_distance
from .pegasos import (
    coefficient_error,
    decision_values,
    eps_delta_check,
    hinge_reference,
    run_pegasos,
)
from .rng import stream
from .statevector import FeatureMapConfig, feature_states

PERCENTILES = (15.9, 84.1)


class ConfigError(ValueError):
    pass


def subseed(master: int, *key) -> int:
    return int(stream(master, *key).integers(2**63))


# -- fitting -------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares line through (ln x, ln mean y) with per-point percentile bands."""

    exponent: float
    intercept: float
    stderr: float
    x: tuple
    means: tuple
    lower: tuple
    upper: tuple
    n_runs: tuple
    residual: float

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "residual": self.residual,
            "points": [
                {"x": x, "mean": m, "p15_9": lo, "p84_1": hi, "n": n}
                for x, m, lo, hi, n in zip(self.x, self.means, self.lower, self.upper, self.n_runs)
            ],
        }


def _ols(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    A = np.vstack([u, np.ones_like(u)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, v, rcond=None)
    res = v - (slope * u + icpt)
    dof = len(u) - 2
    sxx = float(np.sum((u - u.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(res**2) / dof / sxx)) if dof > 0 else float("nan")
    return float(slope), float(icpt), stderr, float(np.sqrt(np.mean(res**2)))


def loglog_fit(x, samples, response: str = "y") -> ScalingFit:
    """Fit a power law to per-x sample groups.

    ``samples[i]`` holds the repeated y values observed at ``x[i]``. With
    ``response="y"`` the fit is ln(mean y) = e ln x + b; with ``response="x"``
    it is ln x = e ln(mean y) + b (used for "R as a function of ε" exponents).
    """
    x = np.asarray(x, dtype=np.float64)
    groups = [np.asarray(s, dtype=np.float64) for s in samples]
    if len(groups) != len(x):
        raise ValueError("one sample group per x value required")
    if len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct x values")
    if np.any(x <= 0) or any(g.size == 0 or np.any(g <= 0) for g in groups):
        raise ValueError("log-log fit needs positive values and nonempty groups")
    means = np.array([g.mean() for g in groups])
    lo = [float(np.percentile(g, PERCENTILES[0], method="inverted_cdf")) for g in groups]
    hi = [float(np.percentile(g, PERCENTILES[1], method="inverted_cdf")) for g in groups]
    if response == "y":
        slope, icpt, se, res = _ols(np.log(x), np.log(means))
    elif response == "x":
        if len(np.unique(means)) < 2:
            raise ValueError("degenerate means")
        slope, icpt, se, res = _ols(np.log(means), np.log(x))
    else:
        raise ValueError("response must be 'x' or 'y'")
    return ScalingFit(
        slope, icpt, se, tuple(map(float, x)), tuple(map(float, means)), tuple(lo), tuple(hi),
        tuple(len(g) for g in groups), res,
    )


def pooled_slope(series) -> tuple[float, float]:
    """Common slope across several (ln x, ln y) series with separate intercepts."""
    us, vs = [], []
    for x, y in series:
        u, v = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
        us.append(u - u.mean())
        vs.append(v - v.mean())
    u, v = np.concatenate(us), np.concatenate(vs)
    slope = float(u @ v / (u @ u))
    dof = len(u) - 1 - len(us)
    res = v - slope * u
    se = float(np.sqrt(res @ res / dof / (u @ u))) if dof > 0 else float("nan")
    return slope, se


def spearman(a, b) -> float:
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return float(np.corrcoef(ra, rb)[0, 1])


def _group(rows, key, value, where=lambda r: True):
    out: dict = {}
    for r in rows:
        if where(r) and r[value] is not None and np.isfinite(r[value]):
            out.setdefault(r[key], []).append(r[value])
    xs = sorted(out)
    return xs, [out[x] for x in xs]


# -- config ----------------------------------------------------------------------


def _coerce(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            elem = default[0] if default else 0.0
            return tuple(_coerce(key, p, elem) for p in text.split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse {text!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(name: str, file_values: dict | None = None, overrides: dict | None = None,
                   require_complete: bool = False) -> dict:
    """Defaults < config file < overrides. With ``require_complete`` the file must name every key."""
    exp = get_experiment(name)
    cfg = dict(exp.defaults)
    raw = dict(file_values or {})
    if require_complete:
        missing = [k for k in exp.defaults if k not in raw]
        if missing:
            raise ConfigError(f"config for '{name}' is missing key '{missing[0]}'")
    raw.update(overrides or {})
    for k, v in raw.items():
        if k not in exp.defaults:
            raise ConfigError(f"unknown config key '{k}' for experiment '{name}'")
        cfg[k] = _coerce(k, v, exp.defaults[k]) if isinstance(v, str) else v
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    for k, v in cfg.items():
        if isinstance(v, tuple):
            v = ", ".join(e if isinstance(e, str) else repr(e) for e in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# -- results ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    name: str
    columns: tuple
    rows: list
    fit: dict
    plot: dict | None = None
    excluded: int = 0
    notes: list = field(default_factory=list)

    def csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[c]) for c in self.columns))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


# -- experiments -----------------------------------------------------------------------


def _dataset(master, name, M, mu, q, run, generator="identity"):
    cfg = DataGenConfig(M, mu, q, subseed(master, name, "data", M, run), generator=generator)
    return generate(cfg)


LATALA = {
    "qubits": 4,
    "mu": 0.1,
    "M_grid": (8, 16, 32, 64),
    "R_grid": (100, 1000, 10000, 100000),
    "seeds": 30,
}


def latala_check(cfg, master, threads=1) -> ExperimentResult:
    q, Ms, Rs, n = cfg["qubits"], cfg["M_grid"], cfg["R_grid"], cfg["seeds"]
    fm = FeatureMapConfig(q)
    # one data set per (M, seed): the expectation covers the data as well as the shot noise
    K = {(M, s): exact_gram(_dataset(master, "latala", M, cfg["mu"], q, s).X, fm) for M in Ms for s in range(n)}

    def work(M, R, s):
        shots = ShotConfig(R, subseed(master, "latala", "noise", M, R, s))
        d = spectral_distance(emulate_kernel_matrix(K[M, s], shots), K[M, s])
        return {"M": M, "R": R, "seed": s, "distance": d, "sqrt_M_over_R": math.sqrt(M / R)}

    rows = _map(work, [(M, R, s) for M in Ms for R in Rs for s in range(n)], threads)
    fits_R = {M: loglog_fit(*_group(rows, "R", "distance", lambda r, M=M: r["M"] == M)) for M in Ms}
    fits_M = {R: loglog_fit(*_group(rows, "M", "distance", lambda r, R=R: r["R"] == R)) for R in Rs}
    fit = {
        "slope_vs_R": {str(M): f.exponent for M, f in fits_R.items()},
        "slope_vs_M": {str(R): f.exponent for R, f in fits_M.items()},
        "fits_vs_R": {str(M): f.as_dict() for M, f in fits_R.items()},
        "fits_vs_M": {str(R): f.as_dict() for R, f in fits_M.items()},
        "target_vs_R": -0.5,
        "target_vs_M": 0.5,
        "exponent": fits_R[max(Ms)].exponent,
        "stderr": fits_R[max(Ms)].stderr,
    }
    plot = {"title": f"spectral error vs R (M={max(Ms)})", "xlabel": "R", "ylabel": "||K_R - K||",
            "fit": fits_R[max(Ms)]}
    return ExperimentResult("latala", ("M", "R", "seed", "distance", "sqrt_M_over_R"), rows, fit, plot)


DUAL_EPS = {
    "qubits": 4,
    "M": 64,
    "mu": 0.1,
    "lambdas": (0.1, 0.001),
    "R_grid": (10**5, 10**6, 10**7, 10**8, 10**9, 10**10, 10**11, 10**12),
    "runs": 20,
}


def _dual_eps_one(K, y, lam, alpha_ref, R, seed):
    KR = emulate_kernel_matrix(K, ShotConfig(R, seed)).entries
    try:
        sol = solve_dual(KR, y, lam)
    except NonConvexError:
        return None
    h_ref = K @ (alpha_ref * y)
    return float(np.max(np.abs(KR @ (sol.alpha * y) - h_ref)))


def dual_eps_scaling(cfg, master, threads=1) -> ExperimentResult:
    q, M, lams, Rs, n = cfg["qubits"], cfg["M"], cfg["lambdas"], cfg["R_grid"], cfg["runs"]
    fm = FeatureMapConfig(q)
    data = [_dataset(master, "dual-eps", M, cfg["mu"], q, r) for r in range(n)]
    grams = [exact_gram(d.X, fm) for d in data]
    refs = {(lam, r): solve_dual(grams[r], data[r].y, lam).alpha for lam in lams for r in range(n)}

    def work(lam, r, R):
        eps = _dual_eps_one(grams[r], data[r].y, lam, refs[lam, r], R, subseed(master, "dual-eps", "noise", r, R))
        return {"lambda": lam, "run": r, "R": R, "epsilon": eps, "status": "ok" if eps is not None else "nonconvex"}

    rows = _map(work, [(lam, r, R) for lam in lams for r in range(n) for R in Rs], threads)
    fits, excluded = {}, 0
    for lam in lams:
        xs, groups = _group(rows, "R", "epsilon", lambda r, lam=lam: r["lambda"] == lam)
        excluded += sum(1 for r in rows if r["lambda"] == lam and r["epsilon"] is None)
        fits[lam] = loglog_fit(xs, groups)
    first = fits[lams[0]]
    fit = {
        "slope_eps_vs_R": {repr(l): f.exponent for l, f in fits.items()},
        "eps_exponent": {repr(l): -1.0 / f.exponent for l, f in fits.items()},
        "fits": {repr(l): f.as_dict() for l, f in fits.items()},
        "exponent": first.exponent,
        "stderr": first.stderr,
        "target": -0.5,
    }
    plot = {"title": f"dual: epsilon vs R (lambda={lams[0]})", "xlabel": "R", "ylabel": "epsilon", "fit": first}
    return ExperimentResult("dual-eps", ("lambda", "run", "R", "epsilon", "status"), rows, fit, plot, excluded)


DUAL_M = {
    "qubits": 4,
    "mu": 0.1,
    "M_grid": (16, 24, 32, 48, 64, 96),
    "eps0": (0.05, 0.1),
    "lambdas": (0.1, 0.001),
    "runs": 10,
    "log2_R_min": 0,
    "log2_R_max": 62,
}


def dual_m_scaling(cfg, master, threads=1) -> ExperimentResult:
    """Smallest R on the grid 2^k with ε(M, R) < ε₀, found by bisection."""
    q, lams, Ms, e0s, n = cfg["qubits"], cfg["lambdas"], cfg["M_grid"], cfg["eps0"], cfg["runs"]
    grid = [2**k for k in range(cfg["log2_R_min"], cfg["log2_R_max"] + 1)]
    fm = FeatureMapConfig(q)

    def work(lam, M, r):
        d = _dataset(master, "dual-m", M, cfg["mu"], q, r)
        K = exact_gram(d.X, fm)
        ref = solve_dual(K, d.y, lam).alpha
        cache = {}

        def eps(i):
            if i not in cache:
                e = _dual_eps_one(K, d.y, lam, ref, grid[i], subseed(master, "dual-m", "noise", M, r, grid[i]))
                cache[i] = math.inf if e is None else e
            return cache[i]

        out = []
        for e0 in e0s:
            lo, hi = 0, len(grid) - 1
            if eps(hi) >= e0:
                out.append({"lambda": lam, "eps0": e0, "M": M, "run": r, "R_eps0": None, "R_tot": None,
                            "status": "unreachable"})
                continue
            while lo < hi:
                mid = (lo + hi) // 2
                if eps(mid) < e0:
                    hi = mid
                else:
                    lo = mid + 1
            R = grid[lo]
            out.append({"lambda": lam, "eps0": e0, "M": M, "run": r, "R_eps0": R, "R_tot": R * M * (M + 1) // 2,
                        "status": "ok"})
        return out

    rows = [row for chunk in _map(work, [(l, M, r) for l in lams for M in Ms for r in range(n)], threads)
            for row in chunk]
    for r in rows:
        r["R_tot_float"] = None if r["R_tot"] is None else float(r["R_tot"])
    fits, series = {}, []
    for lam in lams:
        for e0 in e0s:
            xs, groups = _group(rows, "M", "R_tot_float", lambda r, l=lam, e=e0: r["lambda"] == l and r["eps0"] == e)
            f = loglog_fit(xs, groups)
            fits[f"{lam!r}/{e0!r}"] = f
            series.append((f.x, f.means))
    pooled, pooled_se = pooled_slope(series)
    excluded = sum(1 for r in rows if r["status"] != "ok")
    first = next(iter(fits.values()))
    fit = {
        "exponent": pooled,
        "stderr": pooled_se,
        "per_setting": {k: f.exponent for k, f in fits.items()},
        "fits": {k: f.as_dict() for k, f in fits.items()},
        "R_grid": "2^k, k = %d..%d" % (cfg["log2_R_min"], cfg["log2_R_max"]),
    }
    plot = {"title": "dual: R_tot vs M", "xlabel": "M", "ylabel": "R_tot", "fit": first}
    cols = ("lambda", "eps0", "M", "run", "R_eps0", "R_tot", "status")
    return ExperimentResult("dual-m", cols, rows, fit, plot, excluded)


PEGASOS_EPS = {
    "qubits": 4,
    "M": 50,
    "mu": 0.1,
    "lambdas": (0.1, 0.001),
    "R_grid": (16, 32, 64, 128, 256, 512, 1024, 2048, 4096),
    "runs": 10,
    "T": 750,
    "T_ref": 1000,
    "tau": 1e-4,
    "stop_rule": "fixed",
    "evaluation": "noisy",
}


def _first_converged(losses, tau):
    for t in range(1, len(losses)):
        if abs(losses[t] - losses[t - 1]) < tau:
            return t + 1
    return None


def pegasos_eps_scaling(cfg, master, threads=1) -> ExperimentResult:
    """Noisy Pegasos vs an exact reference trained with its own index sequence.

    ``stop_rule="fixed"`` runs every noisy training for ``T`` steps; ``"tau"``
    stops at the loss-difference rule (capped at ``T``). Steps-to-convergence
    is read off each noisy trace either way.
    """
    if cfg["stop_rule"] not in ("fixed", "tau") or cfg["evaluation"] not in ("noisy", "exact"):
        raise ConfigError("stop_rule must be fixed|tau and evaluation noisy|exact")
    q, M, lams, Rs, n = cfg["qubits"], cfg["M"], cfg["lambdas"], cfg["R_grid"], cfg["runs"]
    fm = FeatureMapConfig(q)
    data = [_dataset(master, "pegasos-eps", M, cfg["mu"], q, r) for r in range(n)]
    grams = [exact_gram(d.X, fm) for d in data]

    def reference(lam, r):
        s, _ = run_pegasos(data[r], lam, cfg["T_ref"], seed=subseed(master, "pegasos-eps", "ref", r), K=grams[r])
        return decision_values(s, data[r], grams[r])

    refs = {(lam, r): reference(lam, r) for lam in lams for r in range(n)}

    def work(lam, r, R):
        K, d = grams[r], data[r]
        access = KernelAccess(R, subseed(master, "pegasos-eps", "noise", lam, r, R))
        tau = cfg["tau"] if cfg["stop_rule"] == "tau" else None
        s, tr = run_pegasos(d, lam, cfg["T"], access, seed=subseed(master, "pegasos-eps", "index", r), tau=tau, K=K)
        ev = access if cfg["evaluation"] == "noisy" else None
        h = decision_values(s, d, K, ev, ("eval",))
        eps = float(np.max(np.abs(h - refs[lam, r])))
        conv = _first_converged(tr.hinge_loss, cfg["tau"])
        return {"lambda": lam, "run": r, "R": R, "epsilon": eps, "steps": len(tr), "steps_to_convergence": conv,
                "circuit_evals": tr.cumulative_circuit_evals[-1]}

    rows = _map(work, [(lam, r, R) for lam in lams for r in range(n) for R in Rs], threads)
    fits, mono, steps = {}, {}, {}
    for lam in lams:
        sel = lambda r, lam=lam: r["lambda"] == lam  # noqa: E731
        xs, groups = _group(rows, "R", "epsilon", sel)
        fits[lam] = loglog_fit(xs, groups, response="x")
        med = [float(np.median(g)) for g in groups]
        mono[lam] = {"medians": med, "strictly_decreasing": bool(np.all(np.diff(med) < 0)),
                     "spearman": spearman(xs, med)}
        conv_x, conv_g = _group(rows, "R", "steps_to_convergence", sel)
        steps[lam] = {str(x): float(np.mean(g)) for x, g in zip(conv_x, conv_g)}
    first = fits[lams[0]]
    fit = {
        "p": {repr(l): -f.exponent for l, f in fits.items()},
        "p_stderr": {repr(l): f.stderr for l, f in fits.items()},
        "monotonicity": {repr(l): v for l, v in mono.items()},
        "mean_steps_to_convergence": {repr(l): v for l, v in steps.items()},
        "fits": {repr(l): f.as_dict() for l, f in fits.items()},
        "exponent": -first.exponent,
        "stderr": first.stderr,
        "normalization": "h = sum_j alpha_j y_j k / (lambda T)",
    }
    plot = {"title": f"pegasos: R vs epsilon (lambda={lams[0]})", "xlabel": "R", "ylabel": "epsilon", "fit": first,
            "swap": True}
    cols = ("lambda", "run", "R", "epsilon", "steps", "steps_to_convergence", "circuit_evals")
    return ExperimentResult("pegasos-eps", cols, rows, fit, plot)


PEGASOS_M = {
    "qubits": 4,
    "mu": 0.1,
    "M_grid": (20, 30, 50, 70, 100, 140, 200),
    "lambdas": (0.1,),
    "runs": 10,
    "T_max": 5000,
    "tau": 1e-4,
}


def pegasos_m_scaling(cfg, master, threads=1) -> ExperimentResult:
    q, Ms, lams, n = cfg["qubits"], cfg["M_grid"], cfg["lambdas"], cfg["runs"]
    fm = FeatureMapConfig(q)

    def work(lam, M, r):
        d = _dataset(master, "pegasos-m", M, cfg["mu"], q, r)
        K = exact_gram(d.X, fm)
        _, tr = run_pegasos(d, lam, cfg["T_max"], seed=subseed(master, "pegasos-m", "index", M, r), tau=cfg["tau"], K=K)
        steps = tr.converged_at
        return {"lambda": lam, "M": M, "run": r, "steps": None if steps is None else float(steps),
                "status": "ok" if steps is not None else "not_converged"}

    rows = _map(work, [(lam, M, r) for lam in lams for M in Ms for r in range(n)], threads)
    fits = {lam: loglog_fit(*_group(rows, "M", "steps", lambda r, l=lam: r["lambda"] == l)) for lam in lams}
    first = fits[lams[0]]
    fit = {
        "slope": {repr(l): f.exponent for l, f in fits.items()},
        "fits": {repr(l): f.as_dict() for l, f in fits.items()},
        "exponent": first.exponent,
        "stderr": first.stderr,
    }
    excluded = sum(1 for r in rows if r["status"] != "ok")
    plot = {"title": "pegasos: steps to convergence vs M", "xlabel": "M", "ylabel": "steps", "fit": first}
    return ExperimentResult("pegasos-m", ("lambda", "M", "run", "steps", "status"), rows, fit, plot, excluded)


VQC_EPS = {
    "qubits": 4,
    "layers": 1,
    "M": 50,
    "mu": 0.1,
    "R_grid": (4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096),
    "runs": 10,
    "T": 1000,
    "batch_size": 5,
    "spsa_a": 0.1,
    "spsa_c": 0.1,
    "spsa_A": 10.0,
    "spsa_alpha": 0.602,
    "spsa_gamma": 0.101,
    "calibrate": True,
    "calibrate_target": 0.6283185307179586,
    "calibrate_c": 0.2,
    "calibrate_A": 0.0,
    "freeze_bias": True,
    "refine_lr": 0.05,
    "refine_tol": 1e-6,
    "refine_max_iter": 50000,
}


def _schedule(cfg):
    return SpsaSchedule(cfg["spsa_a"], cfg["spsa_c"], cfg["spsa_A"], cfg["spsa_alpha"], cfg["spsa_gamma"])


def vqc_eps_scaling(cfg, master, threads=1) -> ExperimentResult:
    q, M, Rs, n = cfg["qubits"], cfg["M"], cfg["R_grid"], cfg["runs"]
    sched = _schedule(cfg)
    data = [_dataset(master, "vqc-eps", M, cfg["mu"], q, r, generator="random") for r in range(n)]
    inits = [init_model(q, cfg["layers"], subseed(master, "vqc-eps", "init", r)) for r in range(n)]
    states = [feature_states(d.X, m.feature_cfg) for d, m in zip(data, inits)]

    def work(r, R):
        seed = subseed(master, "vqc-eps", "train", r, R)
        sch, cal_evals = sched, 0
        if cfg["calibrate"]:
            # a set from the initial loss landscape; the fixed spsa_a/spsa_c/spsa_A are then unused
            sch, cal_evals = calibrate_schedule(
                inits[r], data[r], cfg["batch_size"], R, seed, cfg["calibrate_target"], cfg["calibrate_c"],
                cfg["calibrate_A"], cfg["spsa_alpha"], cfg["spsa_gamma"], states=states[r],
                freeze_bias=cfg["freeze_bias"])
        tc = TrainConfig(cfg["T"], cfg["batch_size"], R, sch, seed,
                         stop_on_convergence=False, freeze_bias=cfg["freeze_bias"])
        model, trace = train(inits[r], data[r], tc, states[r])
        ref = reference_refine(model, data[r], cfg["refine_lr"], tol=cfg["refine_tol"],
                               max_iter=cfg["refine_max_iter"], states=states[r], freeze_bias=cfg["freeze_bias"])
        eps = max_decision_gap(model, ref.model, states[r])
        ok = ref.converged and eps > 0
        return {"run": r, "R": R, "epsilon": eps if ok else None, "raw_epsilon": eps,
                "refine_converged": ref.converged, "refine_iterations": ref.iterations,
                "circuit_evals": trace.cumulative_circuit_evals[-1] if trace.step else 0,
                "calibration_evals": cal_evals, "spsa_a": sch.a,
                "status": "ok" if ok else ("refine_not_converged" if not ref.converged else "degenerate")}

    rows = _map(work, [(r, R) for r in range(n) for R in Rs], threads)
    xs, groups = _group(rows, "R", "epsilon")
    f = loglog_fit(xs, groups, response="x")
    med = [float(np.median(g)) for g in groups]
    excluded = sum(1 for r in rows if r["status"] != "ok")
    fit = {
        "exponent": -f.exponent,
        "stderr": f.stderr,
        "fit": f.as_dict(),
        "medians": med,
        "excluded_runs": [(r["run"], r["R"], r["status"]) for r in rows if r["status"] != "ok"],
        "ansatz": "Ry layer + layers x [CX chain, Ry layer]",
        "parameter_count": q * (cfg["layers"] + 1),
    }
    plot = {"title": "approximate QSVM: R vs epsilon", "xlabel": "R", "ylabel": "epsilon", "fit": f, "swap": True}
    cols = ("run", "R", "epsilon", "raw_epsilon", "refine_converged", "refine_iterations", "circuit_evals",
            "calibration_evals", "spsa_a", "status")
    return ExperimentResult("vqc-eps", cols, rows, fit, plot, excluded)


DANIEL = {
    "trials": 100,
    "M_min": 8,
    "M_max": 32,
    "lambda": 0.1,
    "eps_fraction": 0.5,
}


def daniel_check(cfg, master, threads=1) -> ExperimentResult:
    lam = cfg["lambda"]

    def work(i):
        rng = stream(master, "daniel", i)
        M = int(rng.integers(cfg["M_min"], cfg["M_max"] + 1))
        G = rng.standard_normal((M, M))
        K = G @ G.T / M
        y = rng.choice(np.array([-1, 1]), M)
        H = y[:, None] * K * y[None, :] + lam * np.eye(M)
        mu = float(np.linalg.eigvalsh(H)[0])
        E = rng.standard_normal((M, M))
        E = 0.5 * (E + E.T)
        E *= cfg["eps_fraction"] * mu / np.max(np.abs(np.linalg.eigvalsh(E)))
        rep = daniel_bound_check(K, K + E, y, lam)
        return {"trial": i, "M": M, "mu": rep.mu, "epsilon": rep.epsilon, "lhs": rep.lhs, "rhs": rep.rhs,
                "satisfied": rep.satisfied}

    rows = _map(work, [(i,) for i in range(cfg["trials"])], threads)
    ok = sum(r["satisfied"] for r in rows)
    fit = {"satisfied": ok, "trials": len(rows), "max_lhs_over_rhs": max(r["lhs"] / r["rhs"] for r in rows)}
    return ExperimentResult("daniel", ("trial", "M", "mu", "epsilon", "lhs", "rhs", "satisfied"), rows, fit)


EPS_DELTA = {
    "qubits": 4,
    "M": 50,
    "mu": 0.1,
    "lambdas": (0.1, 0.001),
    "runs": 2,
    "checkpoints": (10, 25, 50, 100, 200, 400, 700, 1000),
    "reductions": ("sum", "mean"),
}


def eps_delta_experiment(cfg, master, threads=1) -> ExperimentResult:
    q, M, lams = cfg["qubits"], cfg["M"], cfg["lambdas"]
    fm = FeatureMapConfig(q)

    def work(lam, r):
        d = _dataset(master, "eps-delta", M, cfg["mu"], q, r)
        K = exact_gram(d.X, fm)
        refs = {red: hinge_reference(K, d.y, lam, red) for red in cfg["reductions"]}
        out = []
        seed = subseed(master, "eps-delta", "index", r)
        for T in cfg["checkpoints"]:
            s, _ = run_pegasos(d, lam, T, seed=seed, K=K)
            for red, ref in refs.items():
                rep = eps_delta_check(s, ref, d, K)
                out.append({"lambda": lam, "run": r, "t": T, "reduction": red, "epsilon": rep.epsilon,
                            "delta": rep.delta, "bound": rep.bound, "satisfied": rep.satisfied,
                            "reference_gap": ref.gap})
        return out

    rows = [x for chunk in _map(work, [(l, r) for l in lams for r in range(cfg["runs"])], threads) for x in chunk]
    fit = {"satisfied": sum(r["satisfied"] for r in rows), "checks": len(rows),
           "max_eps_over_bound": max(r["epsilon"] / r["bound"] for r in rows if r["bound"] > 0)}
    cols = ("lambda", "run", "t", "reduction", "epsilon", "delta", "bound", "satisfied", "reference_gap")
    return ExperimentResult("eps-delta", cols, rows, fit)


PEGASOS_NOISE = {
    "qubits": 4,
    "M": 100,
    "mu": 0.1,
    "lambda": 0.1,
    "R_grid": (64, 256, 1024, 4096),
    "runs": 20,
    "T": 1000,
    "record_every": 10,
    "coef_scaling": "inv_lambda_t",
}


def _alpha_path(trace, m, checkpoints):
    alpha = np.zeros(m, np.int64)
    out, ci = {}, 0
    cps = sorted(checkpoints)
    for t, i, inc in zip(trace.t, trace.chosen_index, trace.incremented):
        if inc:
            alpha[i] += 1
        while ci < len(cps) and cps[ci] == t:
            out[t] = alpha.copy()
            ci += 1
    return out


def pegasos_noise_robustness(cfg, master, threads=1) -> ExperimentResult:
    q, M, lam, n, T = cfg["qubits"], cfg["M"], cfg["lambda"], cfg["runs"], cfg["T"]
    fm = FeatureMapConfig(q)
    cps = sorted(set(list(range(1, T + 1, cfg["record_every"])) + [T]))
    grid = list(cfg["R_grid"]) + [None]

    def work(r):
        d = _dataset(master, "pegasos-noise", M, cfg["mu"], q, r)
        K = exact_gram(d.X, fm)
        seed = subseed(master, "pegasos-noise", "index", r)
        _, tr_exact = run_pegasos(d, lam, T, seed=seed, K=K)
        exact_path = _alpha_path(tr_exact, M, cps)
        out = []
        for R in grid:
            if R is None:
                path = exact_path
            else:
                acc = KernelAccess(R, subseed(master, "pegasos-noise", "noise", r, R))
                _, tr = run_pegasos(d, lam, T, acc, seed=seed, K=K)
                path = _alpha_path(tr, M, cps)
            for t in cps:
                a = path[t]
                h = K @ (a * d.y) / (lam * t)
                accuracy = float(np.mean(np.where(h >= 0, 1, -1) == d.y))
                err = coefficient_error(a, exact_path[t], lam, t, cfg["coef_scaling"])
                out.append({"R": "inf" if R is None else R, "run": r, "t": t, "accuracy": accuracy,
                            "coef_error": err})
        return out

    rows = [x for chunk in _map(work, [(r,) for r in range(n)], threads) for x in chunk]
    final = {}
    for R in grid:
        key = "inf" if R is None else R
        final[str(key)] = [r["accuracy"] for r in rows if r["R"] == key and r["t"] == T]
    exact_final = final["inf"]
    robust = {}
    for R in cfg["R_grid"]:
        diffs = [abs(a - b) for a, b in zip(final[str(R)], exact_final)]
        robust[str(R)] = sum(dd <= 0.05 for dd in diffs) / len(diffs)
    med_err = {}
    for R in cfg["R_grid"]:
        errs = np.array([[r["coef_error"] for r in rows if r["R"] == R and r["run"] == k] for k in range(n)])
        med_err[str(R)] = {"final": float(np.median(errs[:, -1])), "median_trace": np.median(errs, 0).tolist()}
    fit = {
        "fraction_within_5pp_of_exact": robust,
        "median_final_coef_error": {k: v["final"] for k, v in med_err.items()},
        "median_coef_error_trace": {k: v["median_trace"] for k, v in med_err.items()},
        "checkpoints": cps,
        "coef_scaling": cfg["coef_scaling"],
    }
    return ExperimentResult("pegasos-noise", ("R", "run", "t", "accuracy", "coef_error"), rows, fit)


# -- registry ----------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    name: str
    run: callable
    defaults: dict


EXPERIMENTS = {
    e.name: e
    for e in (
        Experiment("latala", latala_check, LATALA),
        Experiment("dual-eps", dual_eps_scaling, DUAL_EPS),
        Experiment("dual-m", dual_m_scaling, DUAL_M),
        Experiment("pegasos-eps", pegasos_eps_scaling, PEGASOS_EPS),
        Experiment("pegasos-m", pegasos_m_scaling, PEGASOS_M),
        Experiment("vqc-eps", vqc_eps_scaling, VQC_EPS),
        Experiment("daniel", daniel_check, DANIEL),
        Experiment("eps-delta", eps_delta_experiment, EPS_DELTA),
        Experiment("pegasos-noise", pegasos_noise_robustness, PEGASOS_NOISE),
    )
}


def get_experiment(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown experiment '{name}' (choose from {', '.join(EXPERIMENTS)})") from None


def run_experiment(name: str, cfg: dict | None = None, master_seed: int = 0, threads: int = 1) -> ExperimentResult:
    exp = get_experiment(name)
    cfg = resolve_config(name, overrides=cfg)
    res = exp.run(cfg, master_seed, threads)
    res.fit.setdefault("n_rows", len(res.rows))
    res.fit["excluded"] = res.excluded
    res.fit["config"] = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}
    res.fit["master_seed"] = master_seed
    return res


# -- output ------------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, ScalingFit):
        return o.as_dict()
    raise TypeError(type(o))


def write_outputs(result: ExperimentResult, outdir, manifest: dict, plot: bool = False) -> list:
    """Write all files into a staging directory, then move them into ``outdir``.

    On any failure nothing is left behind in ``outdir``.
    """
    outdir = Path(outdir)
    outdir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".qsvmlab-", dir=outdir.parent))
    try:
        files = {"results.csv": result.csv_text()}
        fit = {k: v for k, v in result.fit.items()}
        files["fit.json"] = json.dumps(fit, indent=2, sort_keys=True, default=_json_default) + "\n"
        if plot:
            if result.plot is None:
                raise ValueError(f"experiment '{result.name}' has no plot")
            files["plot.svg"] = svg_loglog(**result.plot)
        manifest = dict(manifest)
        manifest["outputs"] = sorted(files) + ["manifest.json"]
        files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
        for name, text in files.items():
            (stage / name).write_text(text)
        outdir.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(stage / name, outdir / name)
        return [str(outdir / n) for n in files]
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def make_manifest(command: str, name: str, cfg: dict, seed: int, threads: int, wall: float) -> dict:
    return {
        "command": command,
        "experiment": name,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "master_seed": seed,
        "threads": threads,
        "tool_version": __version__,
        "backend": BACKEND,
        "wall_clock_seconds": round(wall, 3),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


# -- svg -------------------------------------------------------------------------------


def svg_loglog(title: str, xlabel: str, ylabel: str, fit: ScalingFit, swap: bool = False,
               width=560, height=400) -> str:
    """Log-log scatter of per-point means with percentile bars and the fitted line.

    ``swap`` marks fits made with ``response="x"``: the means then go on the
    horizontal axis and the grid values on the vertical one.
    """
    grid, means = np.log10(fit.x), np.log10(fit.means)
    lo, hi = np.log10(fit.lower), np.log10(fit.upper)
    if swap:
        px, py, xl, yl = means, grid, ylabel, xlabel
    else:
        px, py, xl, yl = grid, means, xlabel, ylabel
    xr = np.concatenate([px, lo, hi]) if swap else px
    yr = py if swap else np.concatenate([py, lo, hi])
    x0, x1 = xr.min(), max(xr.max(), xr.min() + 1e-9)
    y0, y1 = yr.min(), max(yr.max(), yr.min() + 1e-9)
    m = 60

    def sx(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def sy(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    def line(a, b, c, d, style):
        return f'<line x1="{sx(a):.1f}" y1="{sy(b):.1f}" x2="{sx(c):.1f}" y2="{sy(d):.1f}" {style}/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">log10 {xl}</text>',
        f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" '
        f'text-anchor="middle">log10 {yl}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{sx(v):.1f}" y="{height - m + 16}" text-anchor="middle">{v:.2f}</text>')
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{m - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    for i in range(len(px)):
        if swap:
            parts.append(line(lo[i], py[i], hi[i], py[i], 'stroke="#888"'))
        else:
            parts.append(line(px[i], lo[i], px[i], hi[i], 'stroke="#888"'))
        parts.append(f'<circle cx="{sx(px[i]):.1f}" cy="{sy(py[i]):.1f}" r="3.5" fill="#1f77b4"/>')
    # ln(vertical) = exponent * ln(horizontal) + intercept, drawn in log10 units
    ln10 = np.log(10)
    fx = [x0, x1]
    fy = [(fit.exponent * v * ln10 + fit.intercept) / ln10 for v in fx]
    parts.append(line(fx[0], fy[0], fx[1], fy[1], 'stroke="#d62728" stroke-dasharray="5,3"'))
    parts.append(
        f'<text x="{width - m}" y="{m - 8}" text-anchor="end">slope {fit.exponent:.3f} '
        f'(stderr {fit.stderr:.3f})</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
