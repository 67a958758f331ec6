"""Command-line entry point: ``qsvmlab {gen-data,kernel,train,experiment,verify}``."""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import NAME as BACKEND
from .approx_qsvm import TrainConfig, calibrate_schedule, init_model, train, training_accuracy
from .datagen import DataGenConfig, GenerationError, generate
from .dataset import LabeledSet
from .dual_solver import NonConvexError, NonConvergence, solve_dual
from .experiments import (
    EXPERIMENTS,
    format_config,
    make_manifest,
    parse_config_text,
    resolve_config,
    run_experiment,
    write_outputs,
)
from .kernel import KernelAccess, ShotConfig, emulate_kernel_matrix, exact_gram
from .pegasos import DEFAULT_TAU, run_pegasos
from .pegasos import training_accuracy as pegasos_accuracy
from .rng import entropy_seed
from .statevector import FeatureMapConfig


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = entropy_seed()
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("QSVMLAB_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"QSVMLAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _shots(value):
    if value is None or str(value).lower() in ("inf", "exact"):
        return None
    try:
        r = int(float(value)) if "e" in str(value).lower() else int(value)
    except ValueError:
        raise UsageError(f"--shots must be an integer or 'inf', got {value!r}") from None
    if r < 1:
        raise UsageError("--shots must be at least 1")
    return r


def _commit(files: dict):
    """Write ``{path: text}`` atomically as a group; nothing is left behind on failure."""
    paths = {Path(p): t for p, t in files.items()}
    first = next(iter(paths))
    first.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".qsvmlab-", dir=first.parent))
    try:
        staged = []
        for i, (p, text) in enumerate(paths.items()):
            s = stage / f"{i}"
            s.write_text(text)
            staged.append((s, p))
        for s, p in staged:
            p.parent.mkdir(parents=True, exist_ok=True)
            os.replace(s, p)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return [str(p) for p in paths]


def _manifest(command, config, seed, wall, outputs):
    return json.dumps(
        {
            "command": command,
            "config": config,
            "master_seed": seed,
            "tool_version": __version__,
            "backend": BACKEND,
            "wall_clock_seconds": round(wall, 3),
            "outputs": sorted(Path(o).name for o in outputs),
        },
        indent=2,
        sort_keys=True,
    ) + "\n"


def _load_data(path) -> LabeledSet:
    try:
        return LabeledSet.from_csv(path)
    except FileNotFoundError:
        raise UsageError(f"data file not found: {path}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    seed = _seed(args)
    t0 = time.time()
    try:
        cfg = DataGenConfig(args.m, args.mu, args.qubits, seed, args.generator, args.layers, args.repetitions,
                            args.strict)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = generate(cfg)
    out = Path(args.out)
    man = out.with_name(out.name + ".manifest.json")
    config = {k: getattr(cfg, k) for k in ("M", "mu", "qubits", "generator", "layers", "repetitions", "strict")}
    files = {out: data.to_csv(), man: _manifest("gen-data", config, seed, time.time() - t0, [out, man])}
    _commit(files)
    print(f"wrote {len(data)} points to {out}")
    return 0


def cmd_kernel(args) -> int:
    data = _load_data(args.data)
    seed = _seed(args)
    shots = _shots(args.shots)
    t0 = time.time()
    fm = FeatureMapConfig(data.features, args.repetitions)
    K = emulate_kernel_matrix(exact_gram(data.X, fm), ShotConfig(shots, seed))
    out = Path(args.out)
    man = out.with_name(out.name + ".manifest.json")
    config = {"data": str(args.data), "shots": shots, "repetitions": args.repetitions,
              "circuit_evaluations": K.circuit_evaluations}
    _commit({out: K.to_csv(), man: _manifest("kernel", config, seed, time.time() - t0, [out, man])})
    print(f"wrote {K.size}x{K.size} kernel to {out} ({K.circuit_evaluations} circuit evaluations)")
    return 0


def _train_dual(args, data, seed, fm):
    shots = _shots(args.shots)
    K = emulate_kernel_matrix(exact_gram(data.X, fm), ShotConfig(shots, seed))
    sol = solve_dual(K, data.y, args.lam)
    trace = f"step,cumulative_circuit_evals\n0,{K.circuit_evaluations}\n"
    summary = {"objective": sol.objective_value, "kkt_residual": sol.kkt_residual,
               "circuit_evaluations": K.circuit_evaluations}
    return "solution.json", sol.to_json() + "\n", trace, summary


def _train_pegasos(args, data, seed, fm):
    shots = _shots(args.shots)
    K = exact_gram(data.X, fm)
    access = KernelAccess(shots, seed)
    state, trace = run_pegasos(data, args.lam, args.T, access, seed, args.tau, K=K)
    model = json.dumps({"alpha": state.alpha.tolist(), "t": state.t, "lambda": state.lam, "seed": seed},
                       indent=2) + "\n"
    summary = {"steps": state.steps_done, "converged_at": trace.converged_at,
               "training_accuracy": pegasos_accuracy(state, data, K) if state.t > 1 else None,
               "circuit_evaluations": trace.cumulative_circuit_evals[-1] if len(trace) else 0}
    return "model.json", model, trace.to_csv(), summary


def _train_vqc(args, data, seed, fm):
    shots = _shots(args.shots)
    model0 = init_model(data.features, args.layers, seed, args.repetitions)
    cfg = TrainConfig(T_max=args.T, batch_size=args.batch, shots=shots, seed=seed,
                      stop_on_convergence=not args.no_stop, freeze_bias=args.freeze_bias)
    cal_evals = 0
    if args.calibrate:
        sched, cal_evals = calibrate_schedule(model0, data, args.batch, shots, seed, freeze_bias=args.freeze_bias)
        cfg = TrainConfig(args.T, args.batch, shots, sched, seed, stop_on_convergence=not args.no_stop,
                          freeze_bias=args.freeze_bias)
    model, trace = train(model0, data, cfg)
    summary = {"steps": len(trace.step), "converged_at": trace.converged_at,
               "training_accuracy": training_accuracy(model, data), "spsa_a": cfg.schedule.a,
               "calibration_evaluations": cal_evals,
               "circuit_evaluations": trace.cumulative_circuit_evals[-1] if trace.step else 0}
    return "model.json", model.to_json() + "\n", trace.to_csv(), summary


def cmd_train(args) -> int:
    data = _load_data(args.data)
    if args.method == "vqc" and not 1 <= args.batch <= len(data):
        raise UsageError(f"--batch must be between 1 and M={len(data)}")
    seed = _seed(args)
    t0 = time.time()
    fm = FeatureMapConfig(data.features, args.repetitions)
    runner = {"dual": _train_dual, "pegasos": _train_pegasos, "vqc": _train_vqc}[args.method]
    try:
        model_name, model_text, trace_text, summary = runner(args, data, seed, fm)
    except NonConvexError as exc:
        raise UsageError(f"{exc}. The shot-noisy kernel is not positive definite enough; rerun with a "
                         "larger --shots or a larger --lam.") from None
    out = Path(args.out)
    files = {out / model_name: model_text, out / "trace.csv": trace_text}
    config = {k: v for k, v in vars(args).items() if k not in ("func", "seed", "out", "threads")}
    config["summary"] = summary
    man = out / "manifest.json"
    files[man] = _manifest(f"train {args.method}", config, seed, time.time() - t0, list(files) + [man])
    _commit(files)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_experiment(args) -> int:
    if args.manifest:
        try:
            man = json.loads(Path(args.manifest).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read manifest: {exc}") from None
        name = man.get("experiment")
        if args.name and args.name != name:
            raise UsageError(f"manifest is for experiment '{name}', not '{args.name}'")
        file_values = {k: tuple(v) if isinstance(v, list) else v for k, v in man["config"].items()}
        seed = man["master_seed"] if args.seed is None else args.seed
        require = True
    else:
        name = args.name
        if name is None:
            raise UsageError("experiment name required (or --manifest)")
        file_values = {}
        require = False
        if args.config:
            try:
                file_values = parse_config_text(Path(args.config).read_text())
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            require = True
        seed = None
    if name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment '{name}'; choose from {', '.join(EXPERIMENTS)}")
    cfg = resolve_config(name, file_values, _parse_sets(args.set), require_complete=require)
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return 0
    if args.out is None:
        raise UsageError("--out is required")
    if args.plot and name in ("daniel", "eps-delta"):
        raise UsageError(f"experiment '{name}' is a pass/fail check and has no plot")
    if seed is None:
        seed = _seed(args)
    threads = _threads(args)
    t0 = time.time()
    res = run_experiment(name, cfg, seed, threads)
    command = "qsvmlab " + " ".join(sys.argv[1:]) if args.argv is None else args.argv
    manifest = make_manifest(command, name, cfg, seed, threads, time.time() - t0)
    files = write_outputs(res, args.out, manifest, plot=args.plot)
    print(f"{name}: {len(res.rows)} rows, {res.excluded} excluded; wrote {', '.join(Path(f).name for f in files)}")
    return 0


def _verify_checks():
    """Quick theory checks; each yields (label, passed, detail)."""
    fm = FeatureMapConfig(1, 1)
    x = np.linspace(0, 1, 20)
    K = exact_gram(x[:, None], fm)
    err = float(np.max(np.abs(K - np.cos(np.pi * (x[:, None] - x[None, :]) / 2) ** 2)))
    yield "analytic single-qubit kernel", err < 1e-12, f"max error {err:.1e}"
    for name in ("daniel", "eps-delta"):
        res = run_experiment(name, None, 0, 1)
        ok = res.fit["satisfied"] == res.fit.get("trials", res.fit.get("checks"))
        yield name, ok, f"{res.fit['satisfied']} of {len(res.rows)} satisfied"


def cmd_verify(args) -> int:
    failed = 0
    for label, ok, detail in _verify_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        failed += not ok
    return 1 if failed else 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsvmlab", description="QSVM training under finite-shot noise")
    p.add_argument("--version", action="version", version=f"qsvmlab {__version__} ({BACKEND} backend)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (drawn from entropy and printed if omitted)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $QSVMLAB_THREADS or 1)")

    g = sub.add_parser("gen-data", help="generate balanced artificial data")
    g.add_argument("--m", type=int, required=True, help="number of points (even)")
    g.add_argument("--mu", type=float, default=0.1, help="margin; negative gives overlapping classes")
    g.add_argument("--qubits", type=int, default=4)
    g.add_argument("--generator", choices=("identity", "random"), default="identity")
    g.add_argument("--layers", type=int, default=1, help="variational layers of the random generator")
    g.add_argument("--repetitions", type=int, default=4)
    g.add_argument("--strict", action="store_true", help="replay the unbalanced stopping rule verbatim")
    g.add_argument("--out", required=True)
    common(g)
    g.set_defaults(func=cmd_gen_data)

    k = sub.add_parser("kernel", help="compute an exact or shot-emulated kernel matrix")
    k.add_argument("--data", required=True)
    k.add_argument("--shots", default=None, help="shots per entry, or 'inf' for exact")
    k.add_argument("--repetitions", type=int, default=4)
    k.add_argument("--out", required=True)
    common(k)
    k.set_defaults(func=cmd_kernel)

    t = sub.add_parser("train", help="train a classifier")
    t.add_argument("--method", choices=("dual", "pegasos", "vqc"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--lam", type=float, default=0.1, help="regularization (dual, pegasos)")
    t.add_argument("--shots", default=None, help="shots per expectation value, or 'inf'")
    t.add_argument("--T", type=int, default=1000, help="maximum steps (pegasos, vqc)")
    t.add_argument("--tau", type=float, default=DEFAULT_TAU, help="pegasos convergence threshold")
    t.add_argument("--batch", type=int, default=5, help="vqc mini-batch size")
    t.add_argument("--layers", type=int, default=1, help="vqc variational layers")
    t.add_argument("--freeze-bias", action="store_true", help="vqc: keep the bias at 0")
    t.add_argument("--calibrate", action="store_true", help="vqc: calibrate the SPSA gain before training")
    t.add_argument("--no-stop", action="store_true", help="vqc: ignore the parameter-convergence rule")
    t.add_argument("--repetitions", type=int, default=4)
    t.add_argument("--out", required=True, help="output directory")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("experiment", help="run a scaling study or theory check")
    e.add_argument("name", nargs="?", help=", ".join(EXPERIMENTS))
    e.add_argument("--config", help="flat 'key = value' file naming every key")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    e.add_argument("--manifest", help="re-run exactly from a previous manifest.json")
    e.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    e.add_argument("--plot", action="store_true", help="also write plot.svg")
    e.add_argument("--out", help="output directory")
    common(e)
    e.set_defaults(func=cmd_experiment, argv=None)

    v = sub.add_parser("verify", help="run quick theory checks")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if argv is not None and args.command == "experiment":
        args.argv = "qsvmlab " + " ".join(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, GenerationError, NonConvergence) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
