"""Kernelized Pegasos with exact or shot-noisy kernel access.

State follows the usual kernelized form: integer counts ``alpha`` and a step
counter ``t`` that starts at 1, so after ``T`` completed steps ``t = T + 1`` and

    h(x) = 1/(lam*T) * sum_j alpha_j y_j k(x, x_j).

Randomness: the index of step ``t`` comes from stream ``(seed, "index", t)``;
noisy kernel values come from the access object's own seed with keys
``("margin", t)`` for the update rule and ``("trace", t)`` for the loss trace.
Separating the two seeds lets runs at different R share an index sequence.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels
from .dataset import LabeledSet
from .dual_solver import build_q, solve_box_qp
from .kernel import KernelAccess, cross_kernel, exact_gram
from .rng import stream
from .statevector import DimensionError, FeatureMapConfig

DEFAULT_TAU = 1e-4


@dataclass(frozen=True)
class PegasosState:
    alpha: np.ndarray
    t: int = 1
    lam: float = 0.1
    seed: int = 0

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.int64)
        if a.ndim != 1 or np.any(a < 0):
            raise ValueError("alpha must be a nonnegative integer vector")
        if self.t < 1:
            raise ValueError("step counter starts at 1")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if a.sum() > self.t - 1:
            raise ValueError("sum(alpha) cannot exceed the number of completed steps")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def initial(cls, m: int, lam: float, seed: int = 0) -> "PegasosState":
        return cls(np.zeros(m, np.int64), 1, lam, seed)

    @property
    def steps_done(self) -> int:
        return self.t - 1

    def coefficients(self, y) -> np.ndarray:
        """c_j = alpha_j y_j / (lam T), so h(x) = sum_j c_j k(x, x_j)."""
        if self.t < 2:
            raise ValueError("decision function needs at least one completed step (t >= 2)")
        return self.alpha * np.asarray(y, dtype=np.float64) / (self.lam * self.steps_done)


@dataclass
class LossTrace:
    t: list = field(default_factory=list)
    chosen_index: list = field(default_factory=list)
    margin: list = field(default_factory=list)
    incremented: list = field(default_factory=list)
    hinge_loss: list = field(default_factory=list)
    cumulative_circuit_evals: list = field(default_factory=list)
    converged_at: int | None = None

    COLUMNS = ("t", "chosen_index", "margin", "incremented", "hinge_loss", "cumulative_circuit_evals")

    def __len__(self):
        return len(self.t)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
            t, i, m, inc, loss, ev = row
            w.writerow([t, i, repr(float(m)), int(bool(inc)), repr(float(loss)), ev])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def step_index(seed: int, t: int, m: int) -> int:
    return int(stream(seed, "index", t).integers(m))


def step_indices(seed: int, m: int, steps: int, start: int = 1) -> np.ndarray:
    return np.array([step_index(seed, t, m) for t in range(start, start + steps)], dtype=np.int64)


def _gram(data: LabeledSet, K, cfg):
    if K is None:
        K = exact_gram(data.X, cfg or FeatureMapConfig(data.features))
    K = np.ascontiguousarray(K, dtype=np.float64)
    if K.shape != (len(data), len(data)):
        raise DimensionError("kernel matrix does not match the data set")
    return K


def _margin(state, y, K_row_nz, nz, i):
    s = float(np.dot(state.alpha[nz] * y[nz], K_row_nz)) if nz.size else 0.0
    return y[i] * s / (state.lam * state.t)


def pegasos_step(
    state: PegasosState,
    data: LabeledSet,
    access: KernelAccess | None = None,
    K=None,
    cfg: FeatureMapConfig | None = None,
) -> tuple[PegasosState, dict]:
    """Execute step ``state.t``; returns the new state and a step record."""
    access = access or KernelAccess()
    K = _gram(data, K, cfg)
    y = data.y.astype(np.float64)
    t = state.t
    i = step_index(state.seed, t, len(data))
    nz = np.flatnonzero(state.alpha)
    row = access.sample(K[i, nz], "margin", t)
    margin = _margin(state, y, row, nz, i)
    alpha = state.alpha.copy()
    inc = margin < 1.0
    if inc:
        alpha[i] += 1
    new = PegasosState(alpha, t + 1, state.lam, state.seed)
    return new, {"t": t, "index": i, "margin": margin, "incremented": inc, "evals": access.evaluations(nz.size)}


def converged(losses, tau: float = DEFAULT_TAU) -> bool:
    if len(losses) < 2:
        raise ValueError("convergence needs at least two loss values")
    return abs(losses[-1] - losses[-2]) < tau


def _trace_loss(alpha, y, K, lam, t, access, key):
    nz = np.flatnonzero(alpha)
    if nz.size == 0:
        return 1.0
    k = access.sample(K[:, nz], *key)
    h = k @ (alpha[nz] * y[nz]) / (lam * t)
    return float(np.maximum(1.0 - y * h, 0.0).sum() / len(y))


def run_pegasos(
    data: LabeledSet,
    lam: float,
    T: int,
    access: KernelAccess | None = None,
    seed: int = 0,
    tau: float | None = None,
    K=None,
    cfg: FeatureMapConfig | None = None,
) -> tuple[PegasosState, LossTrace]:
    """Run up to ``T`` steps, stopping early at convergence when ``tau`` is given.

    The trace records, per step, the hinge loss of the decision function after
    the step; in shots mode that loss is evaluated with fresh kernel draws.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    access = access or KernelAccess()
    K = _gram(data, K, cfg)
    m = len(data)
    y = data.y.astype(np.float64)
    trace = LossTrace()
    if T == 0:
        return PegasosState.initial(m, lam, seed), trace
    idx = step_indices(seed, m, T)
    tol = -1.0 if tau is None else float(tau)

    if access.exact:
        alpha, margins, inc, losses, done = kernels.pegasos_exact(K, data.y, float(lam), idx, tol)
        nnz_before = _distinct_before(idx[:done], inc[:done])
        trace.t = list(range(1, done + 1))
        trace.chosen_index = [int(i) for i in idx[:done]]
        trace.margin = [float(v) for v in margins[:done]]
        trace.incremented = [bool(v) for v in inc[:done]]
        trace.hinge_loss = [float(v) for v in losses[:done]]
        trace.cumulative_circuit_evals = [int(v) for v in np.cumsum(nnz_before)]
        if tau is not None and done >= 2 and converged(trace.hinge_loss, tau):
            trace.converged_at = done
        return PegasosState(alpha, done + 1, lam, seed), trace

    alpha = np.zeros(m, np.int64)
    total = 0
    for step in range(T):
        t = step + 1
        i = int(idx[step])
        nz = np.flatnonzero(alpha)
        if nz.size:
            row = access.sample(K[i, nz], "margin", t)
            margin = y[i] * float(np.dot(alpha[nz] * y[nz], row)) / (lam * t)
        else:
            margin = 0.0
        total += access.evaluations(nz.size)
        inc = margin < 1.0
        if inc:
            alpha[i] += 1
        loss = _trace_loss(alpha, y, K, lam, t, access, ("trace", t))
        trace.t.append(t)
        trace.chosen_index.append(i)
        trace.margin.append(margin)
        trace.incremented.append(inc)
        trace.hinge_loss.append(loss)
        trace.cumulative_circuit_evals.append(total)
        if tau is not None and t >= 2 and converged(trace.hinge_loss, tau):
            trace.converged_at = t
            break
    return PegasosState(alpha, len(trace) + 1, lam, seed), trace


def _distinct_before(idx, inc) -> np.ndarray:
    """Number of nonzero alpha entries before each step."""
    seen = np.zeros(int(idx.max()) + 1 if idx.size else 0, bool)
    out = np.empty(len(idx), np.int64)
    count = 0
    for s, (i, up) in enumerate(zip(idx, inc)):
        out[s] = count
        if up and not seen[i]:
            seen[i] = True
            count += 1
    return out


def decision_values(state: PegasosState, data: LabeledSet, K_rows, access: KernelAccess | None = None, key=("predict",)):
    """h at the points whose exact kernel rows (against the training set) are ``K_rows``."""
    access = access or KernelAccess()
    c = state.coefficients(data.y)
    nz = np.flatnonzero(state.alpha)
    rows = np.atleast_2d(np.asarray(K_rows, dtype=np.float64))
    if nz.size == 0:
        return np.zeros(len(rows))
    return access.sample(rows[:, nz], *key) @ c[nz]


def decision_value_pegasos(
    state: PegasosState,
    data: LabeledSet,
    x_hat,
    access: KernelAccess | None = None,
    cfg: FeatureMapConfig | None = None,
    key=0,
) -> float:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.shape != (data.features,):
        raise DimensionError(f"x_hat must have {data.features} features")
    c = state.coefficients(data.y)
    row = cross_kernel(x_hat[None, :], data.X, cfg or FeatureMapConfig(data.features))
    return float(decision_values(state, data, row, access, ("predict", key))[0]) if c.size else 0.0


def hinge_loss(state: PegasosState, data: LabeledSet, K=None, access=None, cfg=None) -> float:
    """Mean hinge loss over the training set (1 for the initial state)."""
    if state.t < 2:
        return 1.0
    h = decision_values(state, data, _gram(data, K, cfg), access)
    return float(np.mean(np.maximum(1.0 - data.y * h, 0.0)))


def _objective(c, K, y, lam, reduction):
    h = K @ c
    hinge = np.maximum(1.0 - y * h, 0.0)
    reg = 0.5 * lam * float(c @ h)
    if reduction == "sum":
        return reg + float(hinge.sum())
    if reduction == "mean":
        return reg + float(hinge.mean())
    raise ValueError("reduction must be 'sum' or 'mean'")


def primal_objective(state: PegasosState, data: LabeledSet, K=None, reduction: str = "sum", cfg=None) -> float:
    """f(w) = lam/2 ||w||^2 + sum_i hinge_i (``reduction="mean"`` averages the hinge terms)."""
    K = _gram(data, K, cfg)
    y = data.y.astype(np.float64)
    c = np.zeros(len(y)) if state.t < 2 else state.coefficients(y)
    return _objective(c, K, y, state.lam, reduction)


@dataclass(frozen=True)
class HingeReference:
    """Exact minimizer of the hinge-loss primal, expanded as h*(x) = sum_j coef_j k(x, x_j).

    ``objective`` is the dual value, a certified lower bound on the primal
    optimum; ``gap`` is the primal value at ``coef`` minus it.
    """

    coef: np.ndarray
    objective: float
    gap: float
    lam: float
    reduction: str


def hinge_reference(K, y, lam: float, reduction: str = "sum") -> HingeReference:
    """Solve max sum(a) - 1/(2 lam) aᵀQa over 0 <= a <= C (C = 1, or 1/M for the mean form)."""
    y = np.asarray(y, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    m = len(y)
    C = {"sum": 1.0, "mean": 1.0 / m}.get(reduction)
    if C is None:
        raise ValueError("reduction must be 'sum' or 'mean'")
    H = build_q(K, y) / lam
    # tiny ridge keeps the active-set subsystems factorizable for singular K
    H = 0.5 * (H + H.T) + 1e-12 * np.max(np.diag(H)) * np.eye(m)
    ones = np.ones(m)
    a, _ = solve_box_qp(H, ones, upper=C, tol=1e-12 * max(1.0, 1.0 / lam))
    a = np.clip(a, 0.0, C)
    dual = float(a.sum() - 0.5 * a @ (build_q(K, y) / lam) @ a)
    coef = a * y / lam
    primal = _objective(coef, K, y, lam, reduction)
    return HingeReference(coef, dual, primal - dual, float(lam), reduction)


@dataclass(frozen=True)
class EpsDeltaReport:
    epsilon: float
    delta: float
    bound: float
    satisfied: bool


def eps_delta_check(state: PegasosState, reference: HingeReference, data: LabeledSet, K=None, cfg=None) -> EpsDeltaReport:
    """Check max_i |h*(x_i) - h(x_i)| <= sqrt(2 delta / lam) with delta = f(w) - f*."""
    if reference is None:
        raise ValueError("a reference optimum is required")
    K = _gram(data, K, cfg)
    y = data.y.astype(np.float64)
    c = np.zeros(len(y)) if state.t < 2 else state.coefficients(y)
    eps = float(np.max(np.abs(K @ (c - reference.coef))))
    delta = abs(_objective(c, K, y, state.lam, reference.reduction) - reference.objective)
    bound = float(np.sqrt(2.0 * delta / state.lam))
    return EpsDeltaReport(eps, delta, bound, eps <= bound * (1 + 1e-9))


def coefficient_error(alpha_r, alpha_inf, lam: float, t: int, scaling: str = "inv_lambda_t") -> float:
    """||s (alpha_R - alpha_inf)|| with s = 1/(lam t) (default) or s = lam/t."""
    if scaling == "inv_lambda_t":
        s = 1.0 / (lam * t)
    elif scaling == "lambda_over_t":
        s = lam / t
    else:
        raise ValueError("scaling must be 'inv_lambda_t' or 'lambda_over_t'")
    return float(s * np.linalg.norm(np.asarray(alpha_r, float) - np.asarray(alpha_inf, float)))


def training_accuracy(state: PegasosState, data: LabeledSet, K) -> float:
    if state.t < 2:
        return 0.0
    h = decision_values(state, data, K)
    return float(np.mean(np.where(h >= 0, 1, -1) == data.y))
