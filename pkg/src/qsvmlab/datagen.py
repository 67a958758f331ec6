"""Balanced artificial data labeled by a fixed quantum decision function with a margin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx_qsvm import VariationalModel, model_h_batch
from .dataset import LabeledSet
from .rng import stream
from .statevector import FeatureMapConfig, VariationalConfig

DISCARD = 0
REJECTION_FACTOR = 10**6
_CHUNK = 512


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataGenConfig:
    """``generator="identity"`` uses a trivial variational part; ``"random"`` draws θ ~ U[-π, π]."""

    M: int
    mu: float = 0.1
    qubits: int = 4
    seed: int = 0
    generator: str = "identity"
    layers: int = 1
    repetitions: int = 4
    strict: bool = False

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError(f"M must be a positive even number, got {self.M}")
        if not abs(self.mu) < 2:
            raise ValueError("|mu| must be below 2")
        if self.generator not in ("identity", "random"):
            raise ValueError("generator must be 'identity' or 'random'")


def generator_model(cfg: DataGenConfig) -> VariationalModel:
    fm = FeatureMapConfig(cfg.qubits, cfg.repetitions)
    if cfg.generator == "identity":
        vc = VariationalConfig(cfg.qubits, 0)
        return VariationalModel(np.zeros(vc.parameter_count), 0.0, fm, vc)
    vc = VariationalConfig(cfg.qubits, cfg.layers)
    theta = stream(cfg.seed, "generator").uniform(-np.pi, np.pi, vc.parameter_count)
    return VariationalModel(theta, 0.0, fm, vc)


def label_rule(y_tilde: float, mu: float, coin: float) -> int:
    """-1, +1 or DISCARD; ``coin`` ~ U[0, 1] decides the overlap band."""
    half = mu / 2
    if y_tilde <= -half and y_tilde < half:
        return -1
    if y_tilde >= half and y_tilde > -half:
        return 1
    if y_tilde >= half and y_tilde <= -half:
        return 1 if coin > 0.5 else -1
    return DISCARD


def generate(cfg: DataGenConfig) -> LabeledSet:
    """Rejection-sample points until each class holds exactly M/2 of them.

    Chunk ``c`` of candidates and their coins come from stream
    ``(seed, "datagen", c)`` and are consumed in order, so the result is a
    pure function of the config.
    """
    model = generator_model(cfg)
    quota = cfg.M // 2
    xs, ys = [], []
    counts = {-1: 0, 1: 0}
    rejected = 0
    limit = REJECTION_FACTOR * cfg.M
    chunk = 0
    while True:
        rng = stream(cfg.seed, "datagen", chunk)
        chunk += 1
        X = rng.random((_CHUNK, cfg.qubits))
        coins = rng.random(_CHUNK)
        h = model_h_batch(model, X)
        for x, yt, coin in zip(X, h, coins):
            label = label_rule(float(yt), cfg.mu, float(coin))
            if cfg.strict:
                if label != DISCARD:
                    xs.append(x)
                    ys.append(label)
                    counts[label] += 1
                else:
                    rejected += 1
                if counts[-1] > quota or counts[1] > quota:
                    return LabeledSet(np.array(xs), np.array(ys))
            elif label == DISCARD or counts[label] >= quota:
                rejected += 1
            else:
                xs.append(x)
                ys.append(label)
                counts[label] += 1
                if counts[-1] == quota and counts[1] == quota:
                    return LabeledSet(np.array(xs), np.array(ys))
            if rejected > limit:
                raise GenerationError(
                    f"gave up after {rejected} rejected samples (class counts {counts[-1]}/{counts[1]})"
                )
