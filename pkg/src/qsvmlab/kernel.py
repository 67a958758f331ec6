"""Fidelity kernel: exact evaluation, binomial shot emulation, matrix assembly, spectra."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream
from .statevector import DimensionError, FeatureMapConfig, feature_states

CLAMP_TOL = 1e-12
MAX_SHOTS = np.iinfo(np.int64).max


def _check_shots(shots):
    if shots is None:
        return None
    shots = int(shots)
    if not 1 <= shots <= MAX_SHOTS:
        raise ValueError(f"shot count must be in [1, 2**63-1], got {shots}")
    return shots


@dataclass(frozen=True)
class ShotConfig:
    """``shots=None`` means exact expectation values (R = infinity)."""

    shots: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shots", _check_shots(self.shots))


@dataclass(frozen=True)
class KernelAccess:
    """How kernel values are read: exactly, or as R-shot binomial sample means.

    Each call to :meth:`sample` is keyed, so the same key always reproduces the
    same noisy values and distinct keys give independent fresh draws.
    """

    shots: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shots", _check_shots(self.shots))

    @property
    def exact(self) -> bool:
        return self.shots is None

    def sample(self, k_exact, *key) -> np.ndarray:
        k = np.asarray(k_exact, dtype=np.float64)
        if self.exact:
            return k.copy()
        return emulate_shots(k, self.shots, stream(self.seed, *key))

    def evaluations(self, n_values: int) -> int:
        """Circuit executions (shots) spent on ``n_values`` kernel values."""
        return int(n_values) * (1 if self.exact else self.shots)


def _clamp_probability(p, name="kernel value"):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -CLAMP_TOL) or np.any(p > 1 + CLAMP_TOL) or np.any(np.isnan(p)):
        raise ValueError(f"{name} outside [0, 1]")
    return np.clip(p, 0.0, 1.0)


def emulate_shots(k_exact, shots: int, rng: np.random.Generator):
    """Sample mean of ``shots`` Bernoulli(k) outcomes, drawn as Binomial(R, k)/R."""
    shots = _check_shots(shots)
    p = _clamp_probability(k_exact)
    out = rng.binomial(shots, p) / shots
    return float(out) if np.ndim(out) == 0 else out


def exact_kernel(x, y, cfg: FeatureMapConfig) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError("kernel arguments have different dimensions")
    s = feature_states(np.stack([x, y]), cfg)
    return float(min(abs(np.vdot(s[0], s[1])) ** 2, 1.0))


def cross_kernel(A, B, cfg: FeatureMapConfig) -> np.ndarray:
    """Exact kernel values between every row of ``A`` and every row of ``B``."""
    sa = feature_states(A, cfg)
    sb = feature_states(B, cfg)
    return np.clip(np.abs(sa.conj() @ sb.T) ** 2, 0.0, 1.0)


def exact_gram(X, cfg: FeatureMapConfig) -> np.ndarray:
    """Exact symmetric Gram matrix; upper triangle computed, mirrored, unit diagonal."""
    s = feature_states(X, cfg)
    K = np.clip(np.abs(s.conj() @ s.T) ** 2, 0.0, 1.0)
    iu = np.triu_indices(len(K), 1)
    K.T[iu] = K[iu]
    np.fill_diagonal(K, 1.0)
    return K


@dataclass(frozen=True)
class KernelMatrix:
    entries: np.ndarray
    shots: int | None = None
    seed: int | None = None

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DimensionError("kernel matrix must be square")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def exact(self) -> bool:
        return self.shots is None

    @property
    def circuit_evaluations(self) -> int:
        m = self.size
        return (m * (m + 1) // 2) * (1 if self.shots is None else self.shots)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.entries:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, shots=None, seed=None) -> "KernelMatrix":
        with open(path, newline="") as fh:
            rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
        return cls(np.array(rows), shots=shots, seed=seed)


def emulate_kernel_matrix(K_exact, shots: ShotConfig) -> KernelMatrix:
    """Shot-noisy copy of an exact Gram matrix.

    Each of the M(M+1)/2 upper-triangle entries (diagonal included) is drawn
    from its own stream keyed ``(seed, "kernel", i, j)`` and mirrored.
    """
    K = np.asarray(K_exact, dtype=np.float64)
    if shots.shots is None:
        return KernelMatrix(K, None, None)
    m = len(K)
    p = _clamp_probability(K)
    R = shots.shots
    out = np.empty_like(p)
    for i in range(m):
        for j in range(i, m):
            v = stream(shots.seed, "kernel", i, j).binomial(R, p[i, j]) / R
            out[i, j] = v
            out[j, i] = v
    return KernelMatrix(out, R, shots.seed)


def kernel_matrix(X, cfg: FeatureMapConfig, shots: ShotConfig | None = None) -> KernelMatrix:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DimensionError("kernel_matrix needs a nonempty (M, q) data array")
    K = exact_gram(X, cfg)
    return emulate_kernel_matrix(K, shots or ShotConfig())


def _entries(A):
    return A.entries if isinstance(A, KernelMatrix) else np.asarray(A, dtype=np.float64)


def spectral_distance(A, B) -> float:
    """Operator 2-norm of A - B for symmetric A, B (LAPACK symmetric eigensolver)."""
    a, b = _entries(A), _entries(B)
    if a.shape != b.shape:
        raise DimensionError(f"size mismatch {a.shape} vs {b.shape}")
    d = a - b
    d = 0.5 * (d + d.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(d)))) if d.size else 0.0


def min_eigenvalue(K) -> float:
    k = _entries(K)
    return float(np.linalg.eigvalsh(0.5 * (k + k.T))[0])
