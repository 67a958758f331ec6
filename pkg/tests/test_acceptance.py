"""Exit criteria, each at its stated tolerance and runtime limit.

Every test records one PASS/FAIL line, printed together in the terminal
summary. Experiments run at their default configs with master seed 0.
"""

import json
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from qsvmlab.approx_qsvm import TrainConfig, init_model, train
from qsvmlab.cli import main
from qsvmlab.datagen import DataGenConfig, generate
from qsvmlab.experiments import EXPERIMENTS, run_experiment
from qsvmlab.kernel import KernelAccess, emulate_shots, exact_gram
from qsvmlab.pegasos import run_pegasos
from qsvmlab.statevector import (
    FeatureMapConfig,
    VariationalConfig,
    apply_variational,
    feature_state,
)

pytestmark = pytest.mark.acceptance
SEED = 0


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 -------------------------------------------------------------------------


def test_01_statevector_oracle_equivalence(acceptance_report):
    worst = [0.0]
    unit = st.floats(0, 1, allow_nan=False)
    angle = st.floats(-np.pi, np.pi, allow_nan=False)

    @settings(max_examples=40, derandomize=True, deadline=None, suppress_health_check=list(HealthCheck))
    @given(data=st.data(), q=st.integers(1, 4), layers=st.integers(0, 2))
    def check(data, q, layers):
        x = data.draw(st.lists(unit, min_size=q, max_size=q))
        theta = data.draw(st.lists(angle, min_size=q * (layers + 1), max_size=q * (layers + 1)))
        s = feature_state(x, FeatureMapConfig(q))
        ref = oracles.feature_vector(x)
        out = apply_variational(s, theta, VariationalConfig(q, layers)).amplitudes
        ref_out = oracles.variational_unitary(theta, q, layers) @ ref
        worst[0] = max(worst[0], np.abs(s.amplitudes - ref).max(), np.abs(out - ref_out).max())

    def run():
        check()
        # every qubit count, whatever hypothesis happens to draw
        for q in (1, 2, 3, 4):
            x = np.linspace(0.1, 0.9, q)
            dev = np.abs(feature_state(x, FeatureMapConfig(q)).amplitudes - oracles.feature_vector(x)).max()
            worst[0] = max(worst[0], dev)

    _, dt = _timed(run)
    ok = worst[0] <= 1e-12 and dt < 5
    acceptance_report(1, "statevector oracle equivalence", ok, f"max deviation {worst[0]:.1e}, {dt:.1f} s")
    assert ok


# 2 -------------------------------------------------------------------------


def test_02_analytic_kernel(acceptance_report):
    x = np.linspace(0, 1, 20)
    K, dt = _timed(lambda: exact_gram(x[:, None], FeatureMapConfig(1, 1)))
    err = float(np.abs(K - np.cos(np.pi * (x[:, None] - x[None, :]) / 2) ** 2).max())
    ok = err <= 1e-12 and dt < 1
    acceptance_report(2, "analytic single-qubit kernel", ok, f"max error {err:.1e}, {dt:.2f} s")
    assert ok


# 3 -------------------------------------------------------------------------


def test_03_shot_noise_variance(acceptance_report):
    rng = np.random.default_rng(SEED)
    worst = 0.0

    def run():
        nonlocal worst
        for k in (0.1, 0.5, 0.9):
            for R in (100, 10_000):
                v = emulate_shots(np.full(100_000, k), R, rng).var()
                worst = max(worst, abs(v / (k * (1 - k) / R) - 1))

    _, dt = _timed(run)
    ok = worst <= 0.10 and dt < 30
    acceptance_report(3, "shot-noise variance law", ok, f"max relative deviation {worst:.3f}, {dt:.1f} s")
    assert ok


# 4 -------------------------------------------------------------------------


def test_04_latala_scaling(acceptance_report):
    res, dt = _timed(lambda: run_experiment("latala", master_seed=SEED))
    sR = res.fit["slope_vs_R"].values()
    sM = res.fit["slope_vs_M"].values()
    ok = all(abs(s + 0.5) <= 0.05 for s in sR) and all(abs(s - 0.5) <= 0.15 for s in sM) and dt < 300
    acceptance_report(4, "spectral error scaling", ok,
                      f"slopes vs R {min(sR):.3f}..{max(sR):.3f}, vs M {min(sM):.3f}..{max(sM):.3f}, {dt:.0f} s")
    assert ok


# 5 -------------------------------------------------------------------------


def test_05_dual_eps_scaling(acceptance_report):
    res, dt = _timed(lambda: run_experiment("dual-eps", master_seed=SEED))
    slopes = res.fit["slope_eps_vs_R"]
    ok = all(abs(s + 0.5) <= 0.08 for s in slopes.values()) and dt < 600
    detail = ", ".join(f"lambda={k}: {v:.3f}" for k, v in slopes.items())
    acceptance_report(5, "dual epsilon-vs-R slope", ok, f"{detail}; excluded {res.excluded}; {dt:.0f} s")
    assert ok


# 6 -------------------------------------------------------------------------


def test_06_dual_m_scaling(acceptance_report):
    res, dt = _timed(lambda: run_experiment("dual-m", master_seed=SEED))
    p = res.fit["exponent"]
    ok = 3.8 <= p <= 5.5 and dt < 1800
    per = ", ".join(f"{k}: {v:.2f}" for k, v in res.fit["per_setting"].items())
    acceptance_report(6, "dual R_tot vs M exponent", ok, f"pooled {p:.2f} ({per}); excluded {res.excluded}; {dt:.0f} s")
    assert ok


# 7 -------------------------------------------------------------------------


def test_07_daniel(acceptance_report):
    res, dt = _timed(lambda: run_experiment("daniel", master_seed=SEED))
    ok = res.fit["satisfied"] == res.fit["trials"] == 100 and dt < 60
    acceptance_report(7, "QP perturbation bound", ok, f"{res.fit['satisfied']}/{res.fit['trials']}, {dt:.1f} s")
    assert ok


# 8 -------------------------------------------------------------------------


def test_08_eps_delta(acceptance_report):
    res, dt = _timed(lambda: run_experiment("eps-delta", master_seed=SEED))
    checkpoints = {(r["lambda"], r["run"], r["t"]) for r in res.rows}
    lams = {r["lambda"] for r in res.rows}
    ok = (res.fit["satisfied"] == res.fit["checks"] and len(checkpoints) >= 20 and lams == {0.1, 0.001}
          and dt < 120)
    acceptance_report(8, "epsilon-delta strong convexity bound", ok,
                      f"{res.fit['satisfied']}/{res.fit['checks']} checks at {len(checkpoints)} checkpoints, "
                      f"max eps/bound {res.fit['max_eps_over_bound']:.3f}, {dt:.1f} s")
    assert ok


# 9 -------------------------------------------------------------------------


def test_09_pegasos_m_independence(acceptance_report):
    res, dt = _timed(lambda: run_experiment("pegasos-m", master_seed=SEED))
    s = res.fit["exponent"]
    ok = abs(s) <= 0.3 and dt < 600
    acceptance_report(9, "Pegasos steps vs M", ok, f"slope {s:.3f}; excluded {res.excluded}; {dt:.0f} s")
    assert ok


# 10 ------------------------------------------------------------------------


def test_10_pegasos_eps_scaling(acceptance_report):
    res, dt = _timed(lambda: run_experiment("pegasos-eps", master_seed=SEED))
    p, mono = res.fit["p"], res.fit["monotonicity"]
    gate = "0.1"
    ok = 6 <= p[gate] <= 13 and mono[gate]["strictly_decreasing"] and dt < 2700
    med = ", ".join(f"{m:.3f}" for m in mono[gate]["medians"])
    acceptance_report(10, "Pegasos R vs epsilon exponent", ok,
                      f"lambda=0.1: p={p[gate]:.2f}, medians strictly decreasing "
                      f"{mono[gate]['strictly_decreasing']} [{med}], spearman {mono[gate]['spearman']:.3f}; {dt:.0f} s")
    for lam in p:
        if lam != gate:
            acceptance_report(10, f"(not gated) lambda={lam}", True,
                              f"p={p[lam]:.2f}, strictly decreasing {mono[lam]['strictly_decreasing']}",
                              status="INFO")
    assert ok


# 11 ------------------------------------------------------------------------


def test_11_vqc_eps_scaling(acceptance_report):
    res, dt = _timed(lambda: run_experiment("vqc-eps", master_seed=SEED))
    p = res.fit["exponent"]
    ok = 1.9 <= p <= 4.2 and dt < 3600
    acceptance_report(11, "approximate QSVM R vs epsilon exponent", ok,
                      f"p={p:.2f} (stderr {res.fit['stderr']:.2f}); excluded {res.excluded}; {dt:.0f} s")
    assert ok


# 12 ------------------------------------------------------------------------


def test_12_budget_audit(acceptance_report, tmp_path):
    t0 = time.perf_counter()
    data = generate(DataGenConfig(20, 0.1, 4, SEED))
    path = tmp_path / "d.csv"
    path.write_text(data.to_csv())
    R, M = 1000, len(data)
    main(["train", "--method", "dual", "--data", str(path), "--shots", str(R), "--lam", "1",
          "--seed", "1", "--out", str(tmp_path / "dual")])
    kernel_evals = int((tmp_path / "dual" / "trace.csv").read_text().split()[-1].split(",")[1])
    kernel_ok = kernel_evals == R * M * (M + 1) // 2

    K = exact_gram(data.X, FeatureMapConfig(4))
    _, tr = run_pegasos(data, 0.1, 300, KernelAccess(R, 2), seed=3, K=K)
    alpha, expected = np.zeros(M, int), 0
    for i, inc in zip(tr.chosen_index, tr.incremented):
        expected += R * np.count_nonzero(alpha)
        alpha[i] += inc
    pegasos_ok = tr.cumulative_circuit_evals[-1] == expected

    T, Rv = 40, 64
    _, vt = train(init_model(4, 1, 5), data, TrainConfig(T, 5, Rv, seed=6, stop_on_convergence=False))
    spsa_ok = vt.cumulative_circuit_evals[-1] == 2 * 5 * Rv * T and len(vt.step) == T
    dt = time.perf_counter() - t0
    ok = kernel_ok and pegasos_ok and spsa_ok and dt < 60
    acceptance_report(12, "circuit budget audit", ok,
                      f"kernel {kernel_evals} (expected {R * M * (M + 1) // 2}), Pegasos "
                      f"{tr.cumulative_circuit_evals[-1]} (expected {expected}), SPSA "
                      f"{vt.cumulative_circuit_evals[-1]} (expected {2 * 5 * Rv * T}); {dt:.1f} s")
    assert ok


# 13 ------------------------------------------------------------------------

# reduced grids keep all nine experiments within the runtime limit
SMALL = {
    "latala": {"M_grid": (8, 16), "R_grid": (100, 10000), "seeds": 4},
    "dual-eps": {"M": 16, "R_grid": (10**6, 10**8), "runs": 3},
    "dual-m": {"M_grid": (8, 16), "eps0": (0.1,), "runs": 2},
    "pegasos-eps": {"M": 16, "R_grid": (64, 1024), "runs": 3, "T": 100, "T_ref": 120},
    "pegasos-m": {"M_grid": (20, 30), "runs": 3},
    "vqc-eps": {"M": 10, "R_grid": (16, 1024), "runs": 2, "T": 30, "refine_tol": 1e-4},
    "daniel": {"trials": 10},
    "eps-delta": {"M": 16, "runs": 1, "checkpoints": (10, 50)},
    "pegasos-noise": {"M": 16, "R_grid": (64, 1024), "runs": 3, "T": 60},
}


def test_13_manifest_reproducibility(acceptance_report, tmp_path):
    assert set(SMALL) == set(EXPERIMENTS)
    t0 = time.perf_counter()
    mismatched = []
    for name, cfg in SMALL.items():
        first = tmp_path / name / "orig"
        sets = [a for k, v in cfg.items() for a in ("--set", f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}")]
        assert main(["experiment", name, *sets, "--seed", "17", "--threads", "1", "--out", str(first)]) == 0
        manifest = first / "manifest.json"
        assert json.loads(manifest.read_text())["master_seed"] == 17
        for threads in (1, 4, 8):
            out = tmp_path / name / f"t{threads}"
            assert main(["experiment", "--manifest", str(manifest), "--threads", str(threads), "--out", str(out)]) == 0
            if (out / "results.csv").read_bytes() != (first / "results.csv").read_bytes():
                mismatched.append(f"{name}@{threads}")
    dt = time.perf_counter() - t0
    ok = not mismatched and dt < 300
    acceptance_report(13, "manifest re-run reproducibility", ok,
                      f"{len(SMALL)} experiments x threads 1/4/8, mismatches {mismatched or 'none'}; {dt:.0f} s")
    assert ok
