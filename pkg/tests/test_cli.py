import json

import numpy as np
import pytest

from qsvmlab.cli import main
from qsvmlab.dataset import LabeledSet
from qsvmlab.dual_solver import solve_dual
from qsvmlab.experiments import LATALA, format_config
from qsvmlab.kernel import KernelMatrix, exact_gram
from qsvmlab.statevector import FeatureMapConfig


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["gen-data", "--m", "12", "--mu", "0.1", "--seed", "4", "--out", str(path)]) == 0
    return path


def test_gen_data_balanced_and_deterministic(tmp_path, data_file):
    d = LabeledSet.from_csv(data_file)
    assert len(d) == 12 and (d.y == 1).sum() == 6
    other = tmp_path / "e.csv"
    main(["gen-data", "--m", "12", "--mu", "0.1", "--seed", "4", "--out", str(other)])
    assert other.read_bytes() == data_file.read_bytes()
    man = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert man["master_seed"] == 4 and man["config"]["M"] == 12


def test_gen_data_100_points(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["gen-data", "--m", "100", "--mu", "0.1", "--seed", "0", "--out", str(path)]) == 0
    d = LabeledSet.from_csv(path)
    assert len(d) == 100 and (d.y == -1).sum() == 50


def test_odd_m_errors(tmp_path, capsys):
    path = tmp_path / "d.csv"
    assert main(["gen-data", "--m", "3", "--seed", "0", "--out", str(path)]) != 0
    assert "even" in capsys.readouterr().err
    assert not path.exists()


def test_omitted_seed_is_printed(tmp_path, capsys):
    assert main(["gen-data", "--m", "4", "--out", str(tmp_path / "d.csv")]) == 0
    err = capsys.readouterr().err
    assert err.startswith("seed: ") and int(err.split()[1]) >= 0


def test_kernel_exact_and_noisy(tmp_path, data_file):
    out = tmp_path / "k.csv"
    assert main(["kernel", "--data", str(data_file), "--shots", "inf", "--seed", "0", "--out", str(out)]) == 0
    K = KernelMatrix.from_csv(out)
    d = LabeledSet.from_csv(data_file)
    assert np.array_equal(K.entries, exact_gram(d.X, FeatureMapConfig(4)))
    assert main(["kernel", "--data", str(data_file), "--shots", "100", "--seed", "0", "--out", str(out)]) == 0
    man = json.loads((tmp_path / "k.csv.manifest.json").read_text())
    assert man["config"]["circuit_evaluations"] == 100 * 12 * 13 // 2


def test_bad_shots(tmp_path, data_file):
    assert main(["kernel", "--data", str(data_file), "--shots", "lots", "--seed", "0",
                 "--out", str(tmp_path / "k.csv")]) == 2


def test_missing_data_file(tmp_path, capsys):
    assert main(["train", "--method", "dual", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_train_dual_is_passthrough(tmp_path, data_file):
    out = tmp_path / "dual"
    assert main(["train", "--method", "dual", "--data", str(data_file), "--lam", "0.1", "--seed", "0",
                 "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    d = LabeledSet.from_csv(data_file)
    ref = solve_dual(exact_gram(d.X, FeatureMapConfig(4)), d.y, 0.1)
    assert np.array_equal(np.array(sol["alpha"]), ref.alpha)
    assert (out / "trace.csv").read_text() == "step,cumulative_circuit_evals\n0,78\n"
    assert sorted(json.loads((out / "manifest.json").read_text())["outputs"]) == [
        "manifest.json", "solution.json", "trace.csv"]


def test_train_dual_nonconvex_advises_more_shots(tmp_path, data_file, capsys):
    rc = main(["train", "--method", "dual", "--data", str(data_file), "--lam", "1e-9", "--shots", "1",
               "--seed", "0", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "--shots" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_train_pegasos_uses_tau(tmp_path, data_file):
    out = tmp_path / "p"
    assert main(["train", "--method", "pegasos", "--data", str(data_file), "--shots", "256", "--T", "300",
                 "--tau", "1e-4", "--seed", "1", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["tau"] == 1e-4
    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) - 1 == man["config"]["summary"]["steps"]


def test_train_vqc(tmp_path, data_file, capsys):
    out = tmp_path / "v"
    assert main(["train", "--method", "vqc", "--data", str(data_file), "--shots", "64", "--T", "5",
                 "--no-stop", "--seed", "2", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 5
    assert summary["circuit_evaluations"] == 2 * 5 * 64 * 5
    assert json.loads((out / "manifest.json").read_text())["config"]["batch"] == 5


def test_train_vqc_rejects_oversized_batch(tmp_path, data_file):
    assert main(["train", "--method", "vqc", "--data", str(data_file), "--batch", "13", "--seed", "0",
                 "--out", str(tmp_path / "v")]) == 2


QUICK = ["--set", "M_grid=4,8", "--set", "R_grid=100,1000", "--set", "seeds=2"]


def test_experiment_outputs_and_plot(tmp_path):
    out = tmp_path / "lat"
    assert main(["experiment", "latala", *QUICK, "--seed", "3", "--plot", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["fit.json", "manifest.json", "plot.svg", "results.csv"]
    fit = json.loads((out / "fit.json").read_text())
    assert fit["master_seed"] == 3 and fit["config"]["seeds"] == 2
    assert (out / "plot.svg").read_text().startswith("<svg")


def test_plot_rejected_for_checks(tmp_path):
    assert main(["experiment", "daniel", "--plot", "--seed", "0", "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()


def test_manifest_rerun_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    main(["experiment", "latala", *QUICK, "--seed", "11", "--out", str(a)])
    for threads in ("1", "4"):
        b = tmp_path / f"b{threads}"
        assert main(["experiment", "--manifest", str(a / "manifest.json"), "--threads", threads,
                     "--out", str(b)]) == 0
        assert (b / "results.csv").read_bytes() == (a / "results.csv").read_bytes()


def test_config_file_must_be_complete(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(format_config(LATALA).replace("mu = 0.1\n", ""))
    assert main(["experiment", "latala", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "o")]) == 2
    assert "'mu'" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(format_config(LATALA))
    assert main(["experiment", "latala", "--config", str(cfg), "--set", "seeds=4", "--print-config"]) == 0
    assert "seeds = 4" in capsys.readouterr().out


def test_unknown_experiment_and_key(tmp_path):
    assert main(["experiment", "nope", "--seed", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["experiment", "latala", "--set", "nope=1", "--seed", "0", "--out", str(tmp_path / "o")]) == 2


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("QSVMLAB_THREADS", "zero")
    assert main(["experiment", "daniel", "--set", "trials=2", "--seed", "0", "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("QSVMLAB_THREADS", "2")
    assert main(["experiment", "daniel", "--set", "trials=2", "--seed", "0", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["threads"] == 2


def test_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3 and "FAIL" not in out
