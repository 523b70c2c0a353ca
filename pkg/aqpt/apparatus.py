"""
Simulated polarization apparatus: two wave plates prepare a state from |H⟩,
two more wave plates and a polarizing splitter measure it.

A configuration maps to a prepared state ρ and a two-outcome projective POVM
{M_0, M_1}; the process-measurement operator of outcome γ is M_γ ⊗ ρ*, so
that P(γ | χ) = Tr((M_γ ⊗ ρ*)·χ).
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from aqpt.channels import waveplate_jones
from aqpt.errors import ValidationError
from aqpt.quantum_core import ChiMatrix, DensityMatrix, dagger

HALF_WAVE = np.pi
QUARTER_WAVE = np.pi / 2.0
MAX_JITTER_DEG = 45.0

MODE_TP = "tp"
MODE_LOSSY = "lossy"

_KET_H = np.array([1.0, 0.0], dtype=complex)
_KET_V = np.array([0.0, 1.0], dtype=complex)


@dataclass(frozen=True)
class MeasurementConfig:
    """Wave-plate angles in degrees, stored modulo 180°."""

    prep_hwp: float = 0.0
    prep_qwp: float = 0.0
    meas_qwp: float = 0.0
    meas_hwp: float = 0.0

    def __post_init__(self):
        for name in ("prep_hwp", "prep_qwp", "meas_qwp", "meas_hwp"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(np.mod(value, 180.0)))

    def as_list(self):
        return [self.prep_hwp, self.prep_qwp, self.meas_qwp, self.meas_hwp]

    @classmethod
    def from_list(cls, angles: Sequence[float]) -> "MeasurementConfig":
        if len(angles) != 4:
            raise ValidationError(f"a configuration has 4 angles, got {len(angles)}")
        return cls(*angles)


@dataclass(frozen=True)
class NoiseModel:
    """
    Instrumental imperfections of the simulated apparatus: angular jitter
    drawn once per block from Uniform[-phi0, phi0] degrees on every plate,
    and fixed retardance offsets (radians) in plate order prep HWP, prep QWP,
    meas QWP, meas HWP.
    """

    phi0: float = 0.0
    retardance_errors: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.phi0 <= MAX_JITTER_DEG:
            raise ValidationError(
                f"phi0 must lie in [0, {MAX_JITTER_DEG}], got {self.phi0}"
            )
        errors = tuple(float(e) for e in self.retardance_errors)
        if len(errors) != 4 or not all(np.isfinite(errors)):
            raise ValidationError("retardance_errors needs 4 finite offsets")
        object.__setattr__(self, "retardance_errors", errors)


@dataclass(frozen=True)
class Calibration:
    """Detector intensities I_γ in counts per unit time."""

    intensities: Tuple[float, float] = (1.0e4, 1.0e4)

    def __post_init__(self):
        values = tuple(float(i) for i in self.intensities)
        if len(values) != 2 or not all(np.isfinite(values)) or min(values) <= 0:
            raise ValidationError(
                f"intensities must be 2 positive values, got {values}"
            )
        object.__setattr__(self, "intensities", values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.intensities))


@dataclass(frozen=True)
class CountRecord:
    config: MeasurementConfig
    counts: Tuple[int, int]
    mode: str = MODE_TP
    b: Optional[int] = None
    t: Optional[float] = None

    def __post_init__(self):
        counts = tuple(int(n) for n in self.counts)
        if len(counts) != 2 or min(counts) < 0:
            raise ValidationError(f"counts must be 2 non-negative integers: {counts}")
        object.__setattr__(self, "counts", counts)
        if self.mode == MODE_TP:
            if self.b is None or int(self.b) < 0:
                raise ValidationError("a trace-preserving record needs b >= 0")
            if sum(counts) != int(self.b):
                raise ValidationError(f"counts {counts} do not add up to b={self.b}")
            object.__setattr__(self, "b", int(self.b))
        elif self.mode == MODE_LOSSY:
            if self.t is None or not float(self.t) > 0 or not np.isfinite(self.t):
                raise ValidationError("a lossy record needs a positive duration t")
            object.__setattr__(self, "t", float(self.t))
        else:
            raise ValidationError(f"unknown record mode '{self.mode}'")

    @property
    def events(self) -> int:
        return sum(self.counts)

    def to_json(self) -> dict:
        obj = {"cfg": self.config.as_list(), "n": list(self.counts)}
        if self.mode == MODE_TP:
            obj["b"] = self.b
        else:
            obj["t"] = self.t
        obj["mode"] = self.mode
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CountRecord":
        try:
            mode = obj.get("mode", MODE_TP)
            return cls(
                MeasurementConfig.from_list(obj["cfg"]),
                tuple(obj["n"]),
                mode=mode,
                b=obj.get("b"),
                t=obj.get("t"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed count record: {obj}") from exc


def prepared_state(
    cfg: MeasurementConfig, retardance_errors: Sequence[float] = (0.0, 0.0)
) -> DensityMatrix:
    """ρ = |ψ⟩⟨ψ| with |ψ⟩ = W_QWP(prep_qwp)·W_HWP(prep_hwp)·|H⟩."""
    hwp = waveplate_jones(cfg.prep_hwp, HALF_WAVE + retardance_errors[0])
    qwp = waveplate_jones(cfg.prep_qwp, QUARTER_WAVE + retardance_errors[1])
    return DensityMatrix.from_ket(qwp @ hwp @ _KET_H)


def measurement_povm(
    cfg: MeasurementConfig, retardance_errors: Sequence[float] = (0.0, 0.0)
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Two-outcome POVM {M_0, M_1} of the analyzer: QWP then HWP followed by a
    polarizing beam splitter whose first port transmits |H⟩.
    """
    qwp = waveplate_jones(cfg.meas_qwp, QUARTER_WAVE + retardance_errors[0])
    hwp = waveplate_jones(cfg.meas_hwp, HALF_WAVE + retardance_errors[1])
    w = hwp @ qwp
    w_dag = dagger(w)
    m0 = w_dag @ np.outer(_KET_H, _KET_H) @ w
    m1 = w_dag @ np.outer(_KET_V, _KET_V) @ w
    return m0, m1


def effective_op(m: np.ndarray, rho: DensityMatrix) -> np.ndarray:
    """Process-measurement operator M ⊗ ρ*."""
    return np.kron(m, rho.mat.conj())


def config_ops(
    cfg: MeasurementConfig, noise: Optional[NoiseModel] = None
) -> np.ndarray:
    """
    Stacked operators (M_0 ⊗ ρ*, M_1 ⊗ ρ*) of a configuration, shape
    (2, d², d²). Retardance offsets of ``noise`` are applied when given.
    """
    errors = noise.retardance_errors if noise is not None else (0.0,) * 4
    rho = prepared_state(cfg, errors[:2])
    m0, m1 = measurement_povm(cfg, errors[2:])
    return np.stack([effective_op(m0, rho), effective_op(m1, rho)])


def probabilities(chis: np.ndarray, ops: np.ndarray) -> np.ndarray:
    """
    Tr(op·χ) for every χ in ``chis`` (S, D, D) and every op in ``ops``
    (..., D, D); returns shape (S, ...).
    """
    chis = np.asarray(chis)
    ops = np.asarray(ops)
    s, dd = chis.shape[0], chis.shape[-1] ** 2
    flat_ops = np.swapaxes(ops, -1, -2).reshape(-1, dd)
    values = np.real(chis.reshape(s, dd) @ flat_ops.T)
    return values.reshape((s,) + ops.shape[:-2])


def outcome_prob(chi: ChiMatrix, cfg: MeasurementConfig, gamma: int) -> float:
    if gamma not in (0, 1):
        raise ValidationError(f"outcome must be 0 or 1, got {gamma}")
    p = float(probabilities(chi.mat[None], config_ops(cfg)[gamma])[0])
    return float(np.clip(p, 0.0, 1.0))


def jitter(
    cfg: MeasurementConfig, noise: NoiseModel, rng: np.random.Generator
) -> MeasurementConfig:
    """Adds an independent Uniform[-phi0, phi0] error to each of the four angles."""
    if noise.phi0 == 0.0:
        return cfg
    shifts = rng.uniform(-noise.phi0, noise.phi0, size=4)
    return MeasurementConfig.from_list(np.asarray(cfg.as_list()) + shifts)


def _true_probs(
    true_chi: ChiMatrix,
    cfg: MeasurementConfig,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> np.ndarray:
    ops = config_ops(jitter(cfg, noise, rng), noise)
    return np.clip(probabilities(true_chi.mat[None], ops)[0], 0.0, 1.0)


def simulate_block_tp(
    true_chi: ChiMatrix,
    cfg: MeasurementConfig,
    b: int,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> CountRecord:
    if int(b) < 1:
        raise ValidationError(f"block size must be >= 1, got {b}")
    p0 = min(1.0, float(_true_probs(true_chi, cfg, noise, rng)[0]))
    n0 = int(rng.binomial(int(b), p0))
    return CountRecord(cfg, (n0, int(b) - n0), mode=MODE_TP, b=int(b))


def simulate_block_lossy(
    true_chi: ChiMatrix,
    cfg: MeasurementConfig,
    t: float,
    cal: Calibration,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> CountRecord:
    if not t > 0:
        raise ValidationError(f"duration must be positive, got {t}")
    rates = np.asarray(cal.intensities) * _true_probs(true_chi, cfg, noise, rng) * t
    counts = rng.poisson(rates)
    return CountRecord(cfg, tuple(int(n) for n in counts), mode=MODE_LOSSY, t=t)


def calibrate(
    cal_true: Calibration,
    t_cal: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> Calibration:
    """
    Estimates the detector intensities from a calibration run of duration
    ``t_cal`` with an identity channel in place. ``None`` or an infinite
    duration gives the exact intensities.
    """
    if t_cal is None or np.isinf(t_cal):
        return cal_true
    if not t_cal > 0:
        raise ValidationError(f"calibration duration must be positive, got {t_cal}")
    rng = rng if rng is not None else np.random.default_rng()
    counts = rng.poisson(np.asarray(cal_true.intensities) * t_cal)
    if np.any(counts == 0):
        raise ValidationError("calibration run recorded no counts on a detector")
    return Calibration(tuple(counts / t_cal))


def random_config(rng: np.random.Generator) -> MeasurementConfig:
    return MeasurementConfig.from_list(rng.uniform(0.0, 180.0, size=4))
