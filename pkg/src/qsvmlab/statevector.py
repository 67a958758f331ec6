"""Dense statevector simulation of the feature-map and variational circuits.

Qubit ``i`` is bit ``i`` of the basis index. Gate conventions::

    Rz(a) = diag(exp(-i a/2), exp(+i a/2))
    ZZ(a) = exp(-i (a/2) Z⊗Z)
    Ry(a) = exp(-i (a/2) Y)

Single-gate functions return new :class:`Statevector` values; the batched
circuit functions (``feature_states``, ``variational_expectations``) run on the
selected compiled/numpy backend and work on raw ``(N, 2**q)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels

MAX_QUBITS = 20
NORM_TOL = 1e-12


class DimensionError(ValueError):
    """Inputs with inconsistent qubit counts or vector lengths."""


@dataclass(frozen=True)
class Statevector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.size < 2 or amps.size & (amps.size - 1):
            raise DimensionError(f"amplitude vector length {amps.size} is not a power of two >= 2")
        if amps.size > 1 << MAX_QUBITS:
            raise DimensionError(f"more than {MAX_QUBITS} qubits is not supported")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL * 100:
            raise ValueError(f"statevector is not normalized (norm {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def qubit_count(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @classmethod
    def zero(cls, qubits: int) -> "Statevector":
        _check_qubits(qubits)
        amps = np.zeros(1 << qubits, np.complex128)
        amps[0] = 1.0
        return cls(amps)

    def __len__(self):
        return self.amplitudes.size


@dataclass(frozen=True)
class FeatureMapConfig:
    """Per repetition: H on all qubits, Rz(s*x_i), then ZZ(s*x_i*x_{i+1}) along the chain."""

    qubits: int
    repetitions: int = 4
    angle_scale: float = np.pi
    entanglement: str = "linear"

    def __post_init__(self):
        _check_qubits(self.qubits)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.entanglement != "linear":
            raise ValueError("only nearest-neighbour ('linear') entanglement is supported")


@dataclass(frozen=True)
class VariationalConfig:
    """Ry layer, then ``layers`` blocks of [CX chain, Ry layer]."""

    qubits: int
    layers: int = 1
    parameter_count: int = field(init=False)

    def __post_init__(self):
        _check_qubits(self.qubits)
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        object.__setattr__(self, "parameter_count", self.qubits * (self.layers + 1))


def _check_qubits(q):
    if not 1 <= int(q) <= MAX_QUBITS:
        raise DimensionError(f"qubit count must be in [1, {MAX_QUBITS}], got {q}")


def _check_index(sv: Statevector, qubit: int):
    if not 0 <= qubit < sv.qubit_count:
        raise IndexError(f"qubit index {qubit} out of range for {sv.qubit_count} qubits")


def _bits(q: int, qubit: int) -> np.ndarray:
    return (np.arange(1 << q) >> qubit) & 1


# -- single gates ------------------------------------------------------------


def apply_hadamard_all(state: Statevector) -> Statevector:
    q = state.qubit_count
    psi = state.amplitudes.copy()
    for i in range(q):
        v = psi.reshape(1 << (q - i - 1), 2, 1 << i)
        a, b = v[:, 0, :].copy(), v[:, 1, :].copy()
        v[:, 0, :] = (a + b) / np.sqrt(2.0)
        v[:, 1, :] = (a - b) / np.sqrt(2.0)
    return Statevector(psi)


def apply_rz(state: Statevector, qubit: int, angle: float) -> Statevector:
    _check_index(state, qubit)
    b = _bits(state.qubit_count, qubit)
    phase = np.exp(-0.5j * angle * (1 - 2 * b))
    return Statevector(state.amplitudes * phase)


def apply_zz(state: Statevector, qubit_a: int, qubit_b: int, angle: float) -> Statevector:
    _check_index(state, qubit_a)
    _check_index(state, qubit_b)
    if qubit_a == qubit_b:
        raise ValueError("ZZ needs two distinct qubits")
    q = state.qubit_count
    parity = _bits(q, qubit_a) ^ _bits(q, qubit_b)
    return Statevector(state.amplitudes * np.exp(-0.5j * angle * (1 - 2 * parity)))


def apply_ry(state: Statevector, qubit: int, angle: float) -> Statevector:
    _check_index(state, qubit)
    q = state.qubit_count
    v = state.amplitudes.reshape(1 << (q - qubit - 1), 2, 1 << qubit)
    c, s = np.cos(0.5 * angle), np.sin(0.5 * angle)
    out = np.empty_like(v)
    out[:, 0, :] = c * v[:, 0, :] - s * v[:, 1, :]
    out[:, 1, :] = s * v[:, 0, :] + c * v[:, 1, :]
    return Statevector(out.reshape(-1))


def apply_cx(state: Statevector, control: int, target: int) -> Statevector:
    _check_index(state, control)
    _check_index(state, target)
    if control == target:
        raise ValueError("CX needs two distinct qubits")
    z = np.arange(len(state))
    perm = np.where((z >> control) & 1 == 1, z ^ (1 << target), z)
    return Statevector(state.amplitudes[perm])


# -- circuits ----------------------------------------------------------------


def _as_points(X, q) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != q:
        raise DimensionError(f"expected points with {q} features, got shape {X.shape}")
    return np.ascontiguousarray(X)


def feature_states(X, cfg: FeatureMapConfig) -> np.ndarray:
    """Feature states for every row of ``X`` as an ``(N, 2**q)`` array."""
    X = _as_points(X, cfg.qubits)
    return kernels.feature_states(X, cfg.repetitions, float(cfg.angle_scale))


def feature_state(x, cfg: FeatureMapConfig) -> Statevector:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("feature_state takes a single point")
    return Statevector(feature_states(x, cfg)[0])


def fidelity(a: Statevector, b: Statevector) -> float:
    if a.qubit_count != b.qubit_count:
        raise DimensionError("fidelity of states with different qubit counts")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def _check_theta(theta, cfg: VariationalConfig) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.shape != (cfg.parameter_count,):
        raise DimensionError(f"expected {cfg.parameter_count} parameters, got shape {theta.shape}")
    return theta


def apply_variational(state: Statevector, theta, cfg: VariationalConfig) -> Statevector:
    if state.qubit_count != cfg.qubits:
        raise DimensionError("variational circuit and state disagree on qubit count")
    theta = _check_theta(theta, cfg)
    out = kernels.apply_variational(state.amplitudes[None, :].copy(), theta, cfg.qubits, cfg.layers)
    return Statevector(out[0])


def expectation_z_all(state: Statevector) -> float:
    return float(kernels.z_expectations(np.ascontiguousarray(state.amplitudes[None, :]))[0])


def variational_expectations(states: np.ndarray, thetas, cfg: VariationalConfig) -> np.ndarray:
    """<Z...Z> after W(theta) for every (theta row, state row) pair: shape ``(P, N)``."""
    thetas = np.ascontiguousarray(np.atleast_2d(thetas), dtype=np.float64)
    if thetas.shape[1] != cfg.parameter_count:
        raise DimensionError(f"expected {cfg.parameter_count} parameters per row")
    states = np.ascontiguousarray(states, dtype=np.complex128)
    if states.shape[1] != 1 << cfg.qubits:
        raise DimensionError("state dimension does not match the variational circuit")
    return kernels.variational_expectations(states, thetas, cfg.qubits, cfg.layers)
