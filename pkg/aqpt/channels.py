"""
Reference channels used as ground truth and the wave-plate parameter fit.

Jones convention: R(θ) = [[cos θ, −sin θ], [sin θ, cos θ]] and a retarder
with fast axis at θ and retardance δ is
W(θ, δ) = R(θ)·diag(e^{−iδ/2}, e^{iδ/2})·R(−θ).
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from aqpt.app_utils import is_numeric, str_is_none_or_empty
from aqpt.errors import NotAWaveplateError, ValidationError
from aqpt.quantum_core import (
    ChiMatrix,
    KrausSet,
    average_transmittance,
    bures_distance_sq,
    kraus_to_chi,
    purity,
)

DEFAULT_LCWP_PHASES = 64
WAVEPLATE_FIT_RESTARTS = 8
WAVEPLATE_MAX_RESIDUAL = 0.5


def rotation(theta_deg: float) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]], dtype=complex)


def waveplate_jones(theta_deg: float, delta: float) -> np.ndarray:
    """Jones matrix of a retarder with fast axis at ``theta_deg`` degrees."""
    phase = np.diag([np.exp(-0.5j * delta), np.exp(0.5j * delta)])
    return rotation(theta_deg) @ phase @ rotation(-theta_deg)


def polarizer_jones(axis_deg: float) -> np.ndarray:
    """Projector onto the linear polarization at ``axis_deg`` degrees."""
    t = np.deg2rad(axis_deg)
    axis = np.array([np.cos(t), np.sin(t)], dtype=complex)
    return np.outer(axis, axis.conj())


class ChannelKind(str, Enum):
    IDENTITY = "identity"
    WAVEPLATE = "waveplate"
    DEPOLARIZING = "depol"
    PARTIAL_DEPOLARIZER = "lcwp"
    POLARIZER = "polarizer"
    NEUTRAL_FILTER = "filter"


_PARAM_COUNT = {
    ChannelKind.IDENTITY: (0, 0),
    ChannelKind.WAVEPLATE: (2, 2),
    ChannelKind.DEPOLARIZING: (1, 1),
    ChannelKind.PARTIAL_DEPOLARIZER: (2, 4),
    ChannelKind.POLARIZER: (2, 2),
    ChannelKind.NEUTRAL_FILTER: (1, 1),
}

_LOSSLESS = {
    ChannelKind.IDENTITY,
    ChannelKind.WAVEPLATE,
    ChannelKind.DEPOLARIZING,
    ChannelKind.PARTIAL_DEPOLARIZER,
}


@dataclass(frozen=True)
class ChannelSpec:
    """
    A reference channel: its kind and positional parameters, in the order of
    the CLI grammar.

    - ``waveplate``: (θ degrees, δ radians)
    - ``depol``: (q,) with q ∈ [0, 1]
    - ``lcwp``: (δ0 radians, Δδ radians, n_phases, θ degrees)
    - ``polarizer``: (axis degrees, T) with T ∈ [0, 1]
    - ``filter``: (transmission,) in [0, 1]
    """

    kind: ChannelKind
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        kind = ChannelKind(self.kind)
        params = tuple(float(p) for p in self.params)
        if kind is ChannelKind.PARTIAL_DEPOLARIZER:
            params = params + (float(DEFAULT_LCWP_PHASES), 0.0)[len(params) - 2 :]
        low, high = _PARAM_COUNT[kind]
        if not low <= len(params) <= max(high, low) or (
            kind is ChannelKind.PARTIAL_DEPOLARIZER and len(params) != 4
        ):
            raise ValidationError(
                f"{kind.value} takes {low}..{high} parameters, got {len(params)}"
            )
        if not all(np.isfinite(params)):
            raise ValidationError(f"{kind.value} parameters must be finite")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        self._check_ranges()

    def _check_ranges(self):
        p = self.params
        if self.kind is ChannelKind.DEPOLARIZING and not 0.0 <= p[0] <= 1.0:
            raise ValidationError(f"depolarization fraction {p[0]} outside [0, 1]")
        if self.kind is ChannelKind.POLARIZER and not 0.0 <= p[1] <= 1.0:
            raise ValidationError(f"polarizer transmittance {p[1]} outside [0, 1]")
        if self.kind is ChannelKind.NEUTRAL_FILTER and not 0.0 <= p[0] <= 1.0:
            raise ValidationError(f"filter transmission {p[0]} outside [0, 1]")
        if self.kind is ChannelKind.PARTIAL_DEPOLARIZER and (
            p[2] < 1 or p[2] != int(p[2])
        ):
            raise ValidationError(f"n_phases must be a positive integer, got {p[2]}")

    @classmethod
    def identity(cls) -> "ChannelSpec":
        return cls(ChannelKind.IDENTITY)

    @classmethod
    def waveplate(cls, theta_deg: float, delta: float) -> "ChannelSpec":
        return cls(ChannelKind.WAVEPLATE, (theta_deg, delta))

    @classmethod
    def depolarizing(cls, q: float) -> "ChannelSpec":
        return cls(ChannelKind.DEPOLARIZING, (q,))

    @classmethod
    def partial_depolarizer(
        cls,
        delta0: float,
        ddelta: float,
        n_phases: int = DEFAULT_LCWP_PHASES,
        theta_deg: float = 0.0,
    ) -> "ChannelSpec":
        params = (delta0, ddelta, n_phases, theta_deg)
        return cls(ChannelKind.PARTIAL_DEPOLARIZER, params)

    @classmethod
    def polarizer(cls, axis_deg: float, transmittance: float) -> "ChannelSpec":
        return cls(ChannelKind.POLARIZER, (axis_deg, transmittance))

    @classmethod
    def neutral_filter(cls, transmission: float) -> "ChannelSpec":
        return cls(ChannelKind.NEUTRAL_FILTER, (transmission,))

    @property
    def trace_preserving(self) -> bool:
        return self.kind in _LOSSLESS

    def label(self) -> str:
        """Canonical CLI grammar string; parses back to an equal spec."""
        if not self.params:
            return self.kind.value
        values = list(self.params)
        if self.kind is ChannelKind.PARTIAL_DEPOLARIZER:
            values[2] = int(values[2])
        return f"{self.kind.value}:" + ",".join(repr(v) for v in values)


def parse_channel_spec(text: str) -> ChannelSpec:
    """
    Parses the CLI grammar: ``identity``, ``waveplate:THETA_DEG,DELTA_RAD``,
    ``depol:Q``, ``lcwp:DELTA0,DDELTA[,N_PHASES[,THETA_DEG]]``,
    ``polarizer:AXIS_DEG,T``, ``filter:TRANSMISSION``; ``mmf`` stands for a
    completely depolarizing channel.
    """
    if str_is_none_or_empty(text):
        raise ValidationError("empty channel specification")
    name, _, raw = text.strip().partition(":")
    name = name.strip().lower()
    if name == "mmf" and not raw:
        return ChannelSpec.depolarizing(1.0)
    try:
        kind = ChannelKind(name)
    except ValueError as exc:
        raise ValidationError(f"unknown channel kind '{name}'") from exc
    fields = [] if str_is_none_or_empty(raw) else [f.strip() for f in raw.split(",")]
    if not all(is_numeric(f) for f in fields):
        raise ValidationError(f"non-numeric parameter in '{text}'")
    return ChannelSpec(kind, tuple(float(f) for f in fields))


def _waveplate_chi_mat(theta_deg: float, delta: float) -> np.ndarray:
    vec = waveplate_jones(theta_deg, delta).reshape(-1)
    return np.outer(vec, vec.conj())


def waveplate_chi(theta_deg: float, delta: float) -> ChiMatrix:
    return kraus_to_chi(KrausSet((waveplate_jones(theta_deg, delta),), True))


def make_channel(spec: ChannelSpec) -> ChiMatrix:
    kind, p = spec.kind, spec.params
    identity = kraus_to_chi(KrausSet((np.eye(2, dtype=complex),), True))

    if kind is ChannelKind.IDENTITY:
        return identity
    if kind is ChannelKind.WAVEPLATE:
        return waveplate_chi(p[0], p[1])
    if kind is ChannelKind.DEPOLARIZING:
        q = p[0]
        mat = (1.0 - q) * identity.mat + q * np.eye(4) / 2.0
        return ChiMatrix(mat, trace_preserving=True)
    if kind is ChannelKind.PARTIAL_DEPOLARIZER:
        delta0, ddelta, n_phases, theta = p[0], p[1], int(p[2]), p[3]
        if ddelta == 0.0:
            return waveplate_chi(theta, delta0)
        phases = delta0 + ddelta * np.sin(2.0 * np.pi * np.arange(n_phases) / n_phases)
        mat = np.mean([_waveplate_chi_mat(theta, delta) for delta in phases], axis=0)
        return ChiMatrix(mat, trace_preserving=True)
    if kind is ChannelKind.POLARIZER:
        element = np.sqrt(p[1]) * polarizer_jones(p[0])
        return kraus_to_chi(KrausSet((element,), False))
    # neutral filter
    return ChiMatrix(p[0] * identity.mat, trace_preserving=False)


class WaveplateFit(NamedTuple):
    theta_deg: float
    delta: float
    residual: float


def _canonical_waveplate(theta_deg: float, delta: float) -> Tuple[float, float]:
    """
    Maps (θ, δ) to the representative with θ ∈ [0°, 180°) and δ ∈ [0, π];
    W(θ + 90°, 2π − δ) and W(θ, δ) only differ by a global phase.
    """
    delta = float(np.mod(delta, 2.0 * np.pi))
    if delta > np.pi:
        delta = 2.0 * np.pi - delta
        theta_deg += 90.0
    return float(np.mod(theta_deg, 180.0)), delta


def fit_waveplate(
    chi: ChiMatrix,
    rng: Optional[np.random.Generator] = None,
    restarts: int = WAVEPLATE_FIT_RESTARTS,
) -> WaveplateFit:
    """
    Finds the wave plate (θ, δ) closest to ``chi`` in Bures distance with a
    multi-start Nelder-Mead search. Raises ``NotAWaveplateError`` when the
    best residual d²_B exceeds 0.5.
    """
    if chi.dim != 2:
        raise ValidationError("wave-plate fits are defined for single-qubit channels")
    rng = rng if rng is not None else np.random.default_rng(0)

    def objective(x):
        return bures_distance_sq(chi.mat, _waveplate_chi_mat(x[0], x[1]))

    best = None
    for _ in range(restarts):
        x0 = np.array([rng.uniform(0.0, 180.0), rng.uniform(0.0, 2.0 * np.pi)])
        result = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 5000},
        )
        if best is None or result.fun < best.fun:
            best = result

    theta, delta = _canonical_waveplate(best.x[0], best.x[1])
    residual = float(best.fun)
    if residual > WAVEPLATE_MAX_RESIDUAL:
        raise NotAWaveplateError(
            f"best wave-plate fit leaves residual {residual:.4f} > "
            f"{WAVEPLATE_MAX_RESIDUAL}"
        )
    return WaveplateFit(theta, delta, residual)


def channel_summary(chi: ChiMatrix) -> dict:
    eigenvalues = np.linalg.eigvalsh(chi.mat)
    transmittance = average_transmittance(chi)
    return {
        "d": chi.dim,
        "trace_preserving": bool(chi.trace_preserving),
        "trace": chi.trace,
        "purity": purity(chi) if chi.trace > 0 else None,
        "transmittance": transmittance,
        "loss": 1.0 - transmittance,
        "rank": int(np.sum(eigenvalues > 1e-9)),
    }
