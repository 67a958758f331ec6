import importlib.util
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from qsvmlab import _kernels_numba as nb
from qsvmlab import _kernels_numpy as npk
from qsvmlab.kernel import exact_gram
from qsvmlab.statevector import FeatureMapConfig

ROOT = Path(__file__).resolve().parents[1]


def _inputs(seed=3, m=12, q=3):
    rng = np.random.default_rng(seed)
    X = rng.random((m, q))
    thetas = rng.uniform(-np.pi, np.pi, (4, 3 * q))
    y = np.tile([-1, 1], m // 2).astype(np.int64)
    return X, thetas, y


# compiled complex arithmetic may round differently, so float kernels agree to a few ulps only
TOL = dict(rtol=0, atol=1e-14)


def test_feature_states_agree():
    X, _, _ = _inputs()
    np.testing.assert_allclose(npk.feature_states(X, 4, np.pi), nb.feature_states(X, 4, np.pi), **TOL)


def test_variational_agree():
    X, thetas, _ = _inputs()
    s = npk.feature_states(X, 2, np.pi)
    np.testing.assert_allclose(npk.variational_expectations(s, thetas, 3, 2),
                               nb.variational_expectations(s, thetas, 3, 2), **TOL)
    np.testing.assert_allclose(npk.apply_variational(s.copy(), thetas[0], 3, 2),
                               nb.apply_variational(s.copy(), thetas[0], 3, 2), **TOL)
    np.testing.assert_allclose(npk.z_expectations(s), nb.z_expectations(s), **TOL)


def test_pegasos_exact_bitwise_equal():
    X, _, y = _inputs()
    K = exact_gram(X, FeatureMapConfig(3))
    idx = np.random.default_rng(0).integers(0, len(y), 400)
    for tau in (0.0, 1e-4):
        a = npk.pegasos_exact(K, y, 0.1, idx, tau)
        b = nb.pegasos_exact(K, y, 0.1, idx, tau)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)


def _run(code, **env):
    e = dict(os.environ, **env)
    return subprocess.run([sys.executable, "-c", code], env=e, capture_output=True, text=True, check=True).stdout


def test_env_flag_selects_numpy():
    code = "from qsvmlab._backend import NAME; print(NAME)"
    assert _run(code, QSVMLAB_DISABLE_JIT="1").strip() == "numpy"
    assert _run(code, QSVMLAB_DISABLE_JIT="").strip() == "numba"


def test_benchmark_quick_run():
    found = importlib.util.spec_from_file_location("bench_kernels", ROOT / "benchmarks" / "bench_kernels.py")
    bench = importlib.util.module_from_spec(found)
    found.loader.exec_module(bench)
    rows = bench.main(["--quick"])
    assert len(rows) == 3
    assert all(t_np > 0 and t_nb > 0 for _, t_np, t_nb in rows)
