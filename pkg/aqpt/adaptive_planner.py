"""
Choice of the next measurement configuration and of the block size.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence

import numpy as np
from scipy.special import entr

from aqpt import app_config
from aqpt.apparatus import MeasurementConfig, config_ops, probabilities, random_config
from aqpt.bayes_engine import ParticleEnsemble
from aqpt.errors import ValidationError


class Strategy(str, Enum):
    ADAPTIVE = "adaptive"
    RANDOM = "random"


@dataclass(frozen=True)
class PlannerConfig:
    strategy: Strategy = Strategy.ADAPTIVE
    pool_size: int = field(default_factory=lambda: app_config.AQPT_POOL_SIZE)
    b_min: int = field(default_factory=lambda: app_config.AQPT_BMIN)
    eta: float = field(default_factory=lambda: app_config.AQPT_ETA)

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError as exc:
            raise ValidationError(f"unknown strategy '{self.strategy}'") from exc
        if int(self.pool_size) < 1:
            raise ValidationError(f"pool size must be >= 1, got {self.pool_size}")
        if int(self.b_min) < 1:
            raise ValidationError(f"b_min must be >= 1, got {self.b_min}")
        if not 0.0 < float(self.eta) <= 1.0:
            raise ValidationError(f"eta must lie in (0, 1], got {self.eta}")


def binary_entropy(p) -> np.ndarray:
    """Shannon entropy in bits of a binary distribution (p, 1 − p)."""
    p = np.clip(p, 0.0, 1.0)
    return (entr(p) + entr(1.0 - p)) / np.log(2.0)


def _gains(ens: ParticleEnsemble, configs: Sequence[MeasurementConfig]) -> np.ndarray:
    # π(0) = P(0) and π(1) = 1 − P(0); for trace-preserving samples π = P.
    ops = np.stack([config_ops(cfg) for cfg in configs])
    p0 = np.clip(probabilities(ens.chis, ops)[..., 0], 0.0, 1.0)
    weights = ens.weights
    marginal = weights @ p0
    gain = binary_entropy(marginal) - weights @ binary_entropy(p0)
    return np.maximum(gain, 0.0)


def info_gain(ens: ParticleEnsemble, cfg: MeasurementConfig) -> float:
    """
    Expected decrease of the Shannon entropy of the outcome, in bits, when
    the configuration ``cfg`` is measured on a trace-preserving ensemble.
    """
    if not ens.trace_preserving:
        raise ValidationError("info_gain needs a trace-preserving ensemble")
    return float(_gains(ens, [cfg])[0])


def info_gain_lossy(ens: ParticleEnsemble, cfg: MeasurementConfig) -> float:
    return float(_gains(ens, [cfg])[0])


def candidate_gains(
    ens: ParticleEnsemble, configs: Sequence[MeasurementConfig]
) -> np.ndarray:
    return _gains(ens, configs)


def candidate_pool(size: int, rng: np.random.Generator) -> List[MeasurementConfig]:
    return [random_config(rng) for _ in range(size)]


def next_config(
    ens: ParticleEnsemble, planner: PlannerConfig, rng: np.random.Generator
) -> MeasurementConfig:
    if planner.strategy is Strategy.RANDOM:
        return random_config(rng)
    pool = candidate_pool(planner.pool_size, rng)
    return pool[int(np.argmax(_gains(ens, pool)))]


def block_size(n_events: int, planner: PlannerConfig) -> int:
    """b(N) = max(b_min, ⌈eta·N⌉)."""
    if n_events < 0:
        raise ValidationError(f"event count must be non-negative, got {n_events}")
    return max(int(planner.b_min), math.ceil(round(planner.eta * n_events, 9)))
