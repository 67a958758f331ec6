"""l2-regularized SVM dual: min ½ aᵀ(Q + λI)a − 1ᵀa over a ≥ 0, with Q = diag(y) K diag(y)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import LabeledSet
from .kernel import KernelAccess, KernelMatrix, cross_kernel, spectral_distance
from .statevector import DimensionError, FeatureMapConfig

KKT_TOL = 1e-10
CONVEXITY_TOL = 1e-10


class NonConvexError(ValueError):
    """Q + λI is not safely positive definite (typically a shot-noisy K at small R)."""


class NonConvergence(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DualSolution:
    alpha: np.ndarray
    kkt_residual: float
    objective_value: float
    lam: float
    iterations: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "alpha": [float(a) for a in self.alpha],
                "objective": float(self.objective_value),
                "kkt_residual": float(self.kkt_residual),
                "lambda": float(self.lam),
                "kkt_tolerance": KKT_TOL,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DualSolution":
        d = json.loads(text)
        return cls(np.array(d["alpha"], dtype=np.float64), d["kkt_residual"], d["objective"], d["lambda"])


def _matrix(K):
    return K.entries if isinstance(K, KernelMatrix) else np.asarray(K, dtype=np.float64)


def build_q(K, y) -> np.ndarray:
    k = _matrix(K)
    y = np.asarray(y, dtype=np.float64)
    if k.shape != (len(y), len(y)):
        raise DimensionError(f"kernel {k.shape} does not match {len(y)} labels")
    return y[:, None] * k * y[None, :]


def kkt_residual(H, c, x, upper=None) -> float:
    """Natural residual ||x - clip(x - g, 0, u)||_inf with g = Hx - c."""
    g = H @ x - c
    hi = np.inf if upper is None else upper
    return float(np.max(np.abs(x - np.clip(x - g, 0.0, hi)))) if len(x) else 0.0


def solve_box_qp(H, c, upper=None, tol=KKT_TOL, max_iter=None):
    """Primal active-set method for min ½xᵀHx − cᵀx subject to 0 ≤ x ≤ upper.

    ``H`` must be positive definite. Variables start clamped at zero; the most
    violated KKT multiplier enters the free set (lowest index on ties), free
    subsystems are solved by Cholesky and a ratio test keeps iterates feasible.
    Returns ``(x, iterations)``.
    """
    H = np.asarray(H, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m = len(c)
    u = None if upper is None else float(upper)
    max_iter = 50 * max(m, 1) if max_iter is None else max_iter
    x = np.zeros(m)
    # state: 0 = at lower bound, 1 = free, 2 = at upper bound
    state = np.zeros(m, np.int8)
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NonConvergence(f"active-set QP exceeded {max_iter} iterations")
        free = np.flatnonzero(state == 1)
        if free.size:
            at_u = np.flatnonzero(state == 2)
            rhs = c[free] - (H[np.ix_(free, at_u)] @ x[at_u] if at_u.size else 0.0)
            z = cho_solve(cho_factor(H[np.ix_(free, free)]), rhs)
            low = z < 0.0
            high = np.zeros_like(low) if u is None else z > u
            if low.any() or high.any():
                xf = x[free]
                step = np.ones_like(z)
                d = z - xf
                step[low] = xf[low] / (xf[low] - z[low])
                if u is not None:
                    step[high] = (u - xf[high]) / (z[high] - xf[high])
                blocked = low | high
                tmin = float(np.min(step[blocked]))
                x[free] = xf + tmin * d
                # lowest-index blocking constraint leaves the free set
                cand = free[blocked & (step <= tmin)]
                j = int(cand.min())
                if z[np.searchsorted(free, j)] < 0.0:
                    x[j], state[j] = 0.0, 0
                else:
                    x[j], state[j] = u, 2
                continue
            x[free] = z
        g = H @ x - c
        viol = np.zeros(m)
        lo = state == 0
        viol[lo] = np.maximum(-g[lo], 0.0)
        if u is not None:
            hi = state == 2
            viol[hi] = np.maximum(g[hi], 0.0)
        j = int(np.argmax(viol))  # argmax returns the lowest index among ties
        if viol[j] <= tol:
            return x, it
        state[j] = 1


def solve_dual(K, y, lam: float) -> DualSolution:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    Q = build_q(K, y)
    H = Q + lam * np.eye(len(Q))
    H = 0.5 * (H + H.T)
    mu = float(np.linalg.eigvalsh(H)[0]) if len(H) else lam
    if mu <= CONVEXITY_TOL:
        raise NonConvexError(
            f"smallest eigenvalue of Q + lambda*I is {mu:.3e}; increase the shot count R"
        )
    ones = np.ones(len(H))
    alpha, it = solve_box_qp(H, ones)
    res = kkt_residual(H, ones, alpha)
    if res > KKT_TOL:
        raise NonConvergence(f"KKT residual {res:.3e} above {KKT_TOL}")
    obj = float(0.5 * alpha @ H @ alpha - alpha.sum())
    return DualSolution(alpha, res, obj, float(lam), it)


def dual_objective(K, y, lam, alpha) -> float:
    H = build_q(K, y) + lam * np.eye(len(alpha))
    return float(0.5 * alpha @ H @ alpha - np.sum(alpha))


def decision_from_row(alpha, y, k_row) -> float:
    """h = Σ_i alpha_i y_i k_i for one prediction point."""
    return float(np.dot(np.asarray(alpha) * np.asarray(y), np.asarray(k_row, dtype=np.float64)))


def decision_value(
    solution: DualSolution,
    train: LabeledSet,
    x_hat,
    access: KernelAccess | None = None,
    cfg: FeatureMapConfig | None = None,
    key=0,
) -> float:
    """h(x̂) = Σ_i alpha_i y_i k(x̂, x_i); shot-noisy kernel rows use stream (seed, "predict", key)."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.shape != (train.features,):
        raise DimensionError(f"x_hat must have {train.features} features")
    cfg = cfg or FeatureMapConfig(train.features)
    access = access or KernelAccess()
    row = cross_kernel(x_hat[None, :], train.X, cfg)[0]
    return decision_from_row(solution.alpha, train.y, access.sample(row, "predict", key))


def training_decisions(alpha, y, K_exact, access: KernelAccess | None = None) -> np.ndarray:
    """Decision values on every training point; row i drawn with key ("predict", i)."""
    access = access or KernelAccess()
    K = _matrix(K_exact)
    ay = np.asarray(alpha) * np.asarray(y)
    if access.exact:
        return K @ ay
    return np.array([ay @ access.sample(K[i], "predict", i) for i in range(len(K))])


@dataclass(frozen=True)
class DanielReport:
    lhs: float
    rhs: float
    epsilon: float
    mu: float
    satisfied: bool


def daniel_bound_check(K, K_perturbed, y, lam) -> DanielReport:
    """Compare ||a' - a|| with ε/(μ-ε)·||a|| for a perturbed Gram matrix."""
    k, kp = _matrix(K), _matrix(K_perturbed)
    H = build_q(k, y) + lam * np.eye(len(k))
    mu = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
    eps = spectral_distance(k, kp)
    if eps >= mu:
        raise PreconditionError(f"perturbation {eps:.3e} is not below smallest eigenvalue {mu:.3e}")
    a = solve_dual(k, y, lam).alpha
    ap = solve_dual(kp, y, lam).alpha
    lhs = float(np.linalg.norm(ap - a))
    rhs = float(eps / (mu - eps) * np.linalg.norm(a))
    return DanielReport(lhs, rhs, eps, mu, lhs <= rhs * (1 + 1e-9))
