"""Variational approximate QSVM: h_θ(x) = <ψ(x)|W(θ)† Z^{⊗q} W(θ)|ψ(x)>, classifier sign(h + b).

Training minimizes a clamped cross-entropy with SPSA on mini-batches; the
noise-free reference ("R → ∞") is full-batch gradient descent with central
finite differences started from the noisy solution.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import LabeledSet
from .kernel import _check_shots
from .rng import stream
from .statevector import (
    DimensionError,
    FeatureMapConfig,
    VariationalConfig,
    feature_states,
    variational_expectations,
)

P_CLAMP = 1e-6


@dataclass(frozen=True)
class VariationalModel:
    theta: np.ndarray
    bias: float
    feature_cfg: FeatureMapConfig
    var_cfg: VariationalConfig

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.shape != (self.var_cfg.parameter_count,):
            raise DimensionError(
                f"theta has shape {theta.shape}, circuit needs {self.var_cfg.parameter_count} parameters"
            )
        if self.feature_cfg.qubits != self.var_cfg.qubits:
            raise DimensionError("feature map and variational circuit disagree on qubit count")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", float(self.bias))

    def with_params(self, theta, bias) -> "VariationalModel":
        return replace(self, theta=theta, bias=bias)

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": [float(t) for t in self.theta],
                "bias": self.bias,
                "feature_map": {
                    "qubits": self.feature_cfg.qubits,
                    "repetitions": self.feature_cfg.repetitions,
                    "angle_scale": self.feature_cfg.angle_scale,
                    "entanglement": self.feature_cfg.entanglement,
                },
                "variational": {
                    "qubits": self.var_cfg.qubits,
                    "layers": self.var_cfg.layers,
                    "ansatz": "Ry layer + layers x [CX chain i->i+1, Ry layer]",
                },
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "VariationalModel":
        d = json.loads(text)
        fm = d["feature_map"]
        return cls(
            np.array(d["theta"]),
            d["bias"],
            FeatureMapConfig(fm["qubits"], fm["repetitions"], fm["angle_scale"], fm["entanglement"]),
            VariationalConfig(d["variational"]["qubits"], d["variational"]["layers"]),
        )


def init_model(qubits: int, layers: int = 1, seed: int = 0, repetitions: int = 4, bias: float = 0.0):
    """Random θ ~ U[-π, π] from stream (seed, "init")."""
    var_cfg = VariationalConfig(qubits, layers)
    theta = stream(seed, "init").uniform(-np.pi, np.pi, var_cfg.parameter_count)
    return VariationalModel(theta, bias, FeatureMapConfig(qubits, repetitions), var_cfg)


def model_h_states(model: VariationalModel, states) -> np.ndarray:
    return variational_expectations(states, model.theta, model.var_cfg)[0]


def model_h_batch(model: VariationalModel, X) -> np.ndarray:
    return model_h_states(model, feature_states(X, model.feature_cfg))


def model_h(model: VariationalModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_cfg.qubits,):
        raise DimensionError(f"x must have {model.feature_cfg.qubits} features")
    return float(model_h_batch(model, x[None, :])[0])


def noisy_h(h_exact, shots: int, rng: np.random.Generator):
    """R-shot estimate of a ±1-valued observable with mean h: 2·Binomial(R, (1+h)/2)/R − 1."""
    shots = _check_shots(shots)
    h = np.asarray(h_exact, dtype=np.float64)
    if np.any(np.abs(h) > 1 + 1e-12) or np.any(np.isnan(h)):
        raise ValueError("expectation value outside [-1, 1]")
    p = np.clip((1.0 + h) / 2.0, 0.0, 1.0)
    out = 2.0 * rng.binomial(shots, p) / shots - 1.0
    return float(out) if np.ndim(out) == 0 else out


def _cross_entropy(h, bias, y) -> float:
    p = np.clip((1.0 + h + bias) / 2.0, P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y)
    return float(-np.mean(np.where(y == 1, np.log(p), np.log1p(-p))))


def _ce_rows(H, biases, y) -> np.ndarray:
    p = np.clip((1.0 + H + biases[:, None]) / 2.0, P_CLAMP, 1.0 - P_CLAMP)
    return -np.mean(np.where(y[None, :] == 1, np.log(p), np.log1p(-p)), axis=1)


def cross_entropy_loss(model: VariationalModel, batch: LabeledSet, shots=None, rng=None, states=None) -> float:
    """Mean clamped cross-entropy with p₊ = (1 + h + b)/2; h exact or shot-sampled."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if states is None:
        states = feature_states(batch.X, model.feature_cfg)
    h = model_h_states(model, states)
    if shots is not None:
        h = noisy_h(h, shots, rng if rng is not None else np.random.default_rng())
    return _cross_entropy(h, model.bias, batch.y)


@dataclass(frozen=True)
class SpsaSchedule:
    """Gains a_k = a/(k+1+A)^alpha_exp, c_k = c/(k+1)^gamma_exp."""

    a: float = 0.1
    c: float = 0.1
    A: float = 10.0
    alpha_exp: float = 0.602
    gamma_exp: float = 0.101

    def __post_init__(self):
        if min(self.a, self.c, self.alpha_exp, self.gamma_exp) <= 0 or self.A < 0:
            raise ValueError("SPSA gains and exponents must be positive and A nonnegative")
        if self.alpha_exp <= self.gamma_exp:
            raise ValueError("alpha_exp must exceed gamma_exp")

    def gains(self, k: int):
        return self.a / (k + 1 + self.A) ** self.alpha_exp, self.c / (k + 1) ** self.gamma_exp


@dataclass(frozen=True)
class SpsaStep:
    model: VariationalModel
    loss_plus: float
    loss_minus: float
    circuit_evals: int


def _batch_loss(model, theta, bias, states, y, shots, seed, key):
    h = variational_expectations(states, theta, model.var_cfg)[0]
    if shots is not None:
        h = noisy_h(h, shots, stream(seed, *key))
    return _cross_entropy(h, bias, y)


def spsa_gradient(loss, params, c_k: float, delta):
    """Two-sided SPSA estimate ``(L+ - L-)/(2 c_k) · Δ`` for a ±1 direction Δ.

    ``loss(p, side)`` evaluates the objective at ``p``; ``side`` is +1 or -1 so
    callers can key independent noise to each evaluation. Returns
    ``(gradient, L+, L-)``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    l_plus = loss(params + c_k * delta, 1)
    l_minus = loss(params - c_k * delta, -1)
    # Δ_i ∈ {±1} is its own reciprocal
    return (l_plus - l_minus) / (2.0 * c_k) * delta, l_plus, l_minus


def spsa_step(
    model: VariationalModel,
    data: LabeledSet,
    batch_size: int,
    k: int,
    schedule: SpsaSchedule = SpsaSchedule(),
    shots=None,
    seed: int = 0,
    states=None,
    freeze_bias: bool = False,
) -> SpsaStep:
    """One SPSA update of (θ, b) on a random mini-batch.

    Both side evaluations use the same batch and independent shot-noise streams.
    """
    if not 1 <= batch_size <= len(data):
        raise ValueError("batch_size must be in [1, M]")
    if states is None:
        states = feature_states(data.X, model.feature_cfg)
    rng = stream(seed, "spsa", k)
    idx = np.sort(rng.choice(len(data), batch_size, replace=False))
    d = model.var_cfg.parameter_count
    delta = rng.choice(np.array([-1.0, 1.0]), d + 1)
    if freeze_bias:
        delta[d] = 0.0
    a_k, c_k = schedule.gains(k)
    params = np.append(model.theta, model.bias)
    s, y = states[idx], data.y[idx]

    def loss(p, side):
        return _batch_loss(model, p[:d], p[d], s, y, shots, seed, ("shots", k, side))

    grad, l_plus, l_minus = spsa_gradient(loss, params, c_k, delta)
    new = params - a_k * grad
    evals = 2 * batch_size * (1 if shots is None else shots)
    return SpsaStep(model.with_params(new[:d], new[d]), l_plus, l_minus, evals)


def calibrate_schedule(
    model: VariationalModel,
    data: LabeledSet,
    batch_size: int = 5,
    shots=None,
    seed: int = 0,
    target: float = 2 * np.pi / 10,
    c: float = 0.2,
    A: float = 0.0,
    alpha_exp: float = 0.602,
    gamma_exp: float = 0.101,
    samples: int = 50,
    states=None,
    freeze_bias: bool = False,
):
    """Pick ``a`` so the first update moves each coordinate by about ``target``.

    Averages |L+ - L-|/(2c) over ``samples`` random directions and batches at
    the initial point. Returns ``(schedule, circuit_evals)``; draws use streams
    ``(seed, "calibrate", s)`` and never overlap the training streams.
    """
    if not 1 <= batch_size <= len(data):
        raise ValueError("batch_size must be in [1, M]")
    if states is None:
        states = feature_states(data.X, model.feature_cfg)
    d = model.var_cfg.parameter_count
    params = np.append(model.theta, model.bias)
    mags = np.empty(samples)
    for s_ in range(samples):
        rng = stream(seed, "calibrate", s_)
        idx = np.sort(rng.choice(len(data), batch_size, replace=False))
        delta = rng.choice(np.array([-1.0, 1.0]), d + 1)
        if freeze_bias:
            delta[d] = 0.0
        plus, minus = params + c * delta, params - c * delta
        st, y = states[idx], data.y[idx]
        lp = _batch_loss(model, plus[:d], plus[d], st, y, shots, seed, ("calibrate", s_, 1))
        lm = _batch_loss(model, minus[:d], minus[d], st, y, shots, seed, ("calibrate", s_, -1))
        mags[s_] = abs(lp - lm) / (2.0 * c)
    mean = float(np.mean(mags))
    a = target * (A + 1) ** alpha_exp / mean if mean > 0 else target * (A + 1) ** alpha_exp
    evals = 2 * batch_size * samples * (1 if shots is None else shots)
    return SpsaSchedule(a=a, c=c, A=A, alpha_exp=alpha_exp, gamma_exp=gamma_exp), evals


@dataclass(frozen=True)
class TrainConfig:
    T_max: int = 1000
    batch_size: int = 5
    shots: int | None = None
    schedule: SpsaSchedule = field(default_factory=SpsaSchedule)
    seed: int = 0
    tol: float = 1e-4
    stop_on_convergence: bool = True
    freeze_bias: bool = False


@dataclass
class TrainTrace:
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    param_delta: list = field(default_factory=list)
    cumulative_circuit_evals: list = field(default_factory=list)
    converged_at: int | None = None

    COLUMNS = ("step", "loss", "param_delta", "cumulative_circuit_evals")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(self.step, self.loss, self.param_delta, self.cumulative_circuit_evals):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), row[3]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def train(model0: VariationalModel, data: LabeledSet, config: TrainConfig = TrainConfig(), states=None):
    """SPSA training for up to ``T_max`` steps; stops when ||Δθ||/d < tol if enabled."""
    if states is None:
        states = feature_states(data.X, model0.feature_cfg)
    model = model0
    trace = TrainTrace()
    d = model.var_cfg.parameter_count
    total = 0
    for k in range(config.T_max):
        res = spsa_step(
            model, data, config.batch_size, k, config.schedule, config.shots, config.seed, states,
            config.freeze_bias,
        )
        total += res.circuit_evals
        delta = float(np.linalg.norm(res.model.theta - model.theta))
        model = res.model
        trace.step.append(k + 1)
        trace.loss.append(0.5 * (res.loss_plus + res.loss_minus))
        trace.param_delta.append(delta)
        trace.cumulative_circuit_evals.append(total)
        if delta / d < config.tol:
            if trace.converged_at is None:
                trace.converged_at = k + 1
            if config.stop_on_convergence:
                break
    return model, trace


@dataclass(frozen=True)
class RefineResult:
    model: VariationalModel
    converged: bool
    iterations: int
    last_step: float


def full_loss_gradient(model: VariationalModel, states, y, fd_step=1e-4, freeze_bias=False):
    """Exact-expectation loss and its central-difference gradient in (θ, b)."""
    d = model.var_cfg.parameter_count
    eye = np.eye(d) * fd_step
    thetas = np.vstack([model.theta[None, :], model.theta + eye, model.theta - eye])
    H = variational_expectations(states, thetas, model.var_cfg)
    biases = np.full(len(thetas), model.bias)
    losses = _ce_rows(H, biases, np.asarray(y))
    grad = np.empty(d + 1)
    grad[:d] = (losses[1 : d + 1] - losses[d + 1 :]) / (2 * fd_step)
    if freeze_bias:
        grad[d] = 0.0
    else:
        lb = _ce_rows(H[:1].repeat(2, 0), np.array([model.bias + fd_step, model.bias - fd_step]), np.asarray(y))
        grad[d] = (lb[0] - lb[1]) / (2 * fd_step)
    return float(losses[0]), grad


def gradient_descent(grad, x0, lr: float, tol: float, max_iter: int):
    """x <- x - lr·grad(x) until the step norm drops below ``tol``.

    Returns ``(x, converged, iterations, last_step_norm)``.
    """
    x = np.array(x0, dtype=np.float64)
    step_norm = np.inf
    for it in range(1, max_iter + 1):
        step = lr * grad(x)
        x = x - step
        step_norm = float(np.linalg.norm(step))
        if step_norm < tol:
            return x, True, it, step_norm
    return x, False, max_iter, step_norm


def reference_refine(
    model: VariationalModel,
    data: LabeledSet,
    lr: float = 0.05,
    fd_step: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 50_000,
    states=None,
    freeze_bias: bool = False,
) -> RefineResult:
    """Full-batch gradient descent on exact expectation values until ||Δ(θ, b)|| < tol."""
    if states is None:
        states = feature_states(data.X, model.feature_cfg)
    y = np.asarray(data.y)
    d = model.var_cfg.parameter_count

    def grad(p):
        return full_loss_gradient(model.with_params(p[:d], p[d]), states, y, fd_step, freeze_bias)[1]

    params, ok, it, step_norm = gradient_descent(grad, np.append(model.theta, model.bias), lr, tol, max_iter)
    return RefineResult(model.with_params(params[:d], params[d]), ok, it, step_norm)


def max_decision_gap(model_a: VariationalModel, model_b: VariationalModel, states) -> float:
    """max over the given states of |h_a(x) − h_b(x)| (bias excluded)."""
    return float(np.max(np.abs(model_h_states(model_a, states) - model_h_states(model_b, states))))


def training_accuracy(model: VariationalModel, data: LabeledSet, states=None) -> float:
    if states is None:
        states = feature_states(data.X, model.feature_cfg)
    pred = np.where(model_h_states(model, states) + model.bias >= 0, 1, -1)
    return float(np.mean(pred == data.y))
