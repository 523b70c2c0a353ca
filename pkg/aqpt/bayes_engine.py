"""
Sequential importance sampling over χ-matrices.

The posterior is carried by S samples, each parametrized by the first block
column U of a dilation unitary (the operation elements stacked vertically).
Weights live in log space. When the effective sample size drops, samples are
selected in proportion to their weights and moved by a Metropolis-Hastings
walk on U (additive complex Gaussian step followed by QR re-orthonormalization)
whose acceptance uses the likelihood of the whole history.

In lossy mode U has d³+d rows; the last d×d block is an auxiliary element
that completes the isometry and is left out of χ, so each sample is a
trace-non-increasing process.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from aqpt import app_config
from aqpt.app_utils import _do_log
from aqpt.apparatus import (
    MODE_LOSSY,
    MODE_TP,
    Calibration,
    CountRecord,
    config_ops,
    probabilities,
)
from aqpt.errors import DegenerateEnsembleError, ValidationError
from aqpt.quantum_core import (
    ChiMatrix,
    DilationColumn,
    KrausSet,
    bures_distance_sq_many,
    chi_to_json,
    ginibre,
    hermitize,
    orthonormalize_columns,
    psd_sqrt,
)

ACCEPTANCE_LOW = 0.2
ACCEPTANCE_HIGH = 0.4
SCALE_DOWN = 0.7
SCALE_UP = 1.3


@dataclass(frozen=True, eq=False)
class Particle:
    """Read-only view of one sample of the ensemble."""

    chi: ChiMatrix
    dilation: DilationColumn
    log_weight: float
    auxiliary: Optional[np.ndarray] = None


def dilation_rows(d: int, mode: str) -> int:
    return d**3 + d if mode == MODE_LOSSY else d**3


def chis_from_dilations(dilations: np.ndarray, d: int) -> np.ndarray:
    """
    χ_s = Σ_k vec(E_k) vec(E_k)† for a stack of dilation columns; the rows
    past d³ (the auxiliary element of lossy samples) are ignored.
    """
    n = dilations.shape[0]
    vecs = dilations[:, : d**3, :].reshape(n, d * d, d * d)
    return np.einsum("ski,skj->sij", vecs, vecs.conj())


class ParticleEnsemble:
    """
    Weighted samples of the posterior p(χ | D) together with the data seen so
    far. The ensemble is mutated in place by ``update_weights`` and
    ``resample``; use ``copy()`` to branch.
    """

    def __init__(
        self,
        dilations: np.ndarray,
        d: int,
        mode: str = MODE_TP,
        log_weights: Optional[np.ndarray] = None,
        calibration: Optional[Calibration] = None,
    ):
        if mode not in (MODE_TP, MODE_LOSSY):
            raise ValidationError(f"unknown ensemble mode '{mode}'")
        dilations = np.asarray(dilations, dtype=complex)
        if dilations.ndim != 3 or dilations.shape[1:] != (dilation_rows(d, mode), d):
            raise ValidationError(
                f"dilations of shape {dilations.shape} do not fit d={d} in {mode} mode"
            )
        if dilations.shape[0] < 1:
            raise ValidationError("an ensemble needs at least one particle")
        self.d = d
        self.mode = mode
        self.calibration = calibration or Calibration(
            (app_config.AQPT_INTENSITY, app_config.AQPT_INTENSITY)
        )
        self.dilations = dilations
        self.chis = chis_from_dilations(dilations, d)
        size = dilations.shape[0]
        if log_weights is None:
            log_weights = np.full(size, -np.log(size))
        log_weights = np.asarray(log_weights, dtype=float)
        if log_weights.shape != (size,):
            raise ValidationError("one log-weight per particle is required")
        self.log_weights = log_weights - logsumexp(log_weights)
        self.log_likelihood = np.zeros(size)
        self.history: List[CountRecord] = []
        self.last_acceptance_rate: Optional[float] = None
        self._ops: List[np.ndarray] = []
        self._cache = None

    @classmethod
    def from_kraus(
        cls,
        kraus_sets: Sequence[KrausSet],
        mode: str = MODE_TP,
        calibration: Optional[Calibration] = None,
    ) -> "ParticleEnsemble":
        """
        Builds an ensemble with uniform weights from explicit operation
        elements, zero-padded to d² elements; lossy samples get the auxiliary
        element √(I − Σ E†E).
        """
        d = kraus_sets[0].dim
        columns = []
        for ks in kraus_sets:
            if ks.dim != d or len(ks.elements) > d * d:
                raise ValidationError(
                    "Kraus sets must share d and have at most d² elements"
                )
            blocks = list(ks.elements) + [np.zeros((d, d))] * (d * d - len(ks.elements))
            if mode == MODE_LOSSY:
                blocks.append(psd_sqrt(np.eye(d) - hermitize(ks.completeness())))
            columns.append(np.vstack(blocks))
        return cls(np.array(columns), d, mode=mode, calibration=calibration)

    @property
    def size(self) -> int:
        return self.dilations.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def trace_preserving(self) -> bool:
        return self.mode == MODE_TP

    @property
    def particles(self) -> List[Particle]:
        out = []
        tp = self.trace_preserving
        for s in range(self.size):
            col = self.dilations[s]
            out.append(
                Particle(
                    chi=ChiMatrix(self.chis[s], trace_preserving=tp),
                    dilation=DilationColumn(
                        col[: self.d**3], self.d, trace_preserving=tp
                    ),
                    log_weight=float(self.log_weights[s]),
                    auxiliary=None if tp else col[self.d**3 :].copy(),
                )
            )
        return out

    def copy(self) -> "ParticleEnsemble":
        clone = ParticleEnsemble.__new__(ParticleEnsemble)
        clone.__dict__.update(self.__dict__)
        clone.dilations = self.dilations.copy()
        clone.chis = self.chis.copy()
        clone.log_weights = self.log_weights.copy()
        clone.log_likelihood = self.log_likelihood.copy()
        clone.history = list(self.history)
        clone._ops = list(self._ops)
        return clone

    def snapshot(self) -> dict:
        return {
            "mode": self.mode,
            "d": self.d,
            "S": self.size,
            "blocks": len(self.history),
            "particles": [
                {
                    "weight": float(w),
                    "chi": chi_to_json(
                        ChiMatrix(chi, trace_preserving=self.trace_preserving)
                    ),
                }
                for w, chi in zip(self.weights, self.chis)
            ],
        }

    def _append(self, rec: CountRecord, ops: np.ndarray):
        self.history.append(rec)
        self._ops.append(ops)
        self._cache = None

    def _history_arrays(self):
        if self._cache is None:
            counts = np.array([r.counts for r in self.history], dtype=float)
            durations = np.array([r.t or 0.0 for r in self.history])
            self._cache = (np.stack(self._ops), counts, durations)
        return self._cache

    def block_log_likelihood(
        self, chis: np.ndarray, ops: np.ndarray, counts: np.ndarray, durations
    ) -> np.ndarray:
        """
        Log-likelihood of count blocks for every χ of a stack. ``ops`` has
        shape (B, 2, D, D), ``counts`` (B, 2); returns shape (S,).
        """
        probs = probabilities(chis, ops)
        if self.mode == MODE_TP:
            p0 = np.clip(probs[..., 0], 0.0, 1.0)
            terms = xlogy(counts[:, 0], p0) + xlogy(counts[:, 1], 1.0 - p0)
        else:
            p = np.clip(probs, 0.0, 1.0)
            rates = np.asarray(self.calibration.intensities) * p
            terms = np.sum(
                xlogy(counts, p) - rates * np.asarray(durations)[:, None], axis=-1
            )
        return terms.sum(axis=-1)

    def history_log_likelihood(self, chis: np.ndarray) -> np.ndarray:
        if not self.history:
            return np.zeros(chis.shape[0])
        ops, counts, durations = self._history_arrays()
        return self.block_log_likelihood(chis, ops, counts, durations)


def init_ensemble(
    size: int,
    d: int,
    mode: str,
    rng: np.random.Generator,
    calibration: Optional[Calibration] = None,
) -> ParticleEnsemble:
    """
    Draws ``size`` samples from the prior induced by Haar-random dilation
    columns of d³×d (tp) or (d³+d)×d (lossy) size.
    """
    if size < 2:
        raise ValidationError(f"an ensemble needs S >= 2 particles, got {size}")
    if d < 1:
        raise ValidationError(f"dimension must be positive, got {d}")
    rows = dilation_rows(d, mode)
    dilations = orthonormalize_columns(ginibre((size, rows, d), rng))
    return ParticleEnsemble(dilations, d, mode=mode, calibration=calibration)


def _normalized(log_weights: np.ndarray, ens: ParticleEnsemble) -> np.ndarray:
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise DegenerateEnsembleError(
            "every particle has zero likelihood for the recorded data",
            details={
                "mode": ens.mode,
                "S": ens.size,
                "blocks": len(ens.history),
                "events": int(sum(r.events for r in ens.history)),
                "last_record": ens.history[-1].to_json() if ens.history else None,
            },
        )
    return log_weights - total


def update_weights(ens: ParticleEnsemble, rec: CountRecord) -> ParticleEnsemble:
    """
    Multiplies every weight by the likelihood of a count block (evaluated at
    the commanded configuration) and renormalizes. Raises
    ``DegenerateEnsembleError`` without touching the ensemble when every
    weight vanishes.
    """
    if rec.mode != ens.mode:
        raise ValidationError(f"{rec.mode} record fed to a {ens.mode} ensemble")
    if rec.mode == MODE_TP and rec.events == 0:
        return ens
    ops = config_ops(rec.config)
    block_ll = ens.block_log_likelihood(
        ens.chis, ops[None], np.array([rec.counts], dtype=float), [rec.t or 0.0]
    )
    with np.errstate(invalid="ignore"):
        log_weights = _normalized(ens.log_weights + block_ll, ens)
    ens.log_weights = log_weights
    ens.log_likelihood = ens.log_likelihood + block_ll
    ens._append(rec, ops)
    return ens


def bme(ens: ParticleEnsemble) -> ChiMatrix:
    """Bayesian mean estimate Σ_s w_s χ_s."""
    mean = np.einsum("s,sij->ij", ens.weights, ens.chis)
    return ChiMatrix(hermitize(mean), trace_preserving=ens.trace_preserving)


def distribution_size(ens: ParticleEnsemble) -> float:
    """Posterior spread Σ_s w_s d²_B(χ_s, χ̂)."""
    ref = bme(ens).mat
    return float(np.dot(ens.weights, bures_distance_sq_many(ens.chis, ref)))


def effective_sample_size(ens: ParticleEnsemble) -> float:
    return float(1.0 / np.sum(ens.weights**2))


def should_resample(ens: ParticleEnsemble, threshold: Optional[float] = None) -> bool:
    if threshold is None:
        threshold = app_config.AQPT_RESAMPLE_THRESHOLD
    return effective_sample_size(ens) < threshold * ens.size


def _mh_walk(
    ens: ParticleEnsemble, sigma: float, steps: int, rng: np.random.Generator
) -> List[float]:
    rates = []
    for _ in range(steps):
        proposal = orthonormalize_columns(
            ens.dilations + sigma * ginibre(ens.dilations.shape, rng)
        )
        proposed_chis = chis_from_dilations(proposal, ens.d)
        proposed_ll = ens.history_log_likelihood(proposed_chis)
        log_u = np.log(rng.uniform(size=ens.size))
        with np.errstate(invalid="ignore"):
            log_ratio = proposed_ll - ens.log_likelihood
            accept = np.isfinite(proposed_ll) & (log_u < log_ratio)
        ens.dilations[accept] = proposal[accept]
        ens.chis[accept] = proposed_chis[accept]
        ens.log_likelihood[accept] = proposed_ll[accept]
        rate = float(np.mean(accept))
        rates.append(rate)
        if rate < ACCEPTANCE_LOW:
            sigma *= SCALE_DOWN
        elif rate > ACCEPTANCE_HIGH:
            sigma *= SCALE_UP
    return rates


def resample(
    ens: ParticleEnsemble,
    rng: np.random.Generator,
    mh_steps: Optional[int] = None,
    scale: Optional[float] = None,
) -> ParticleEnsemble:
    """
    Multinomial selection in proportion to the weights, weight reset to 1/S,
    then ``mh_steps`` Metropolis-Hastings moves per particle with step size
    σ = scale·√(distribution size). With an empty history only the selection
    and the reset are performed.
    """
    mh_steps = mh_steps if mh_steps is not None else app_config.AQPT_MH_STEPS
    scale = scale if scale is not None else app_config.AQPT_MH_SCALE
    sigma = scale * np.sqrt(distribution_size(ens))

    index = rng.choice(ens.size, size=ens.size, p=ens.weights / ens.weights.sum())
    ens.dilations = ens.dilations[index]
    ens.chis = ens.chis[index]
    ens.log_likelihood = ens.log_likelihood[index]
    ens.log_weights = np.full(ens.size, -np.log(ens.size))

    if not ens.history or mh_steps == 0:
        ens.last_acceptance_rate = None
        return ens

    rates = _mh_walk(ens, sigma, mh_steps, rng)
    ens.last_acceptance_rate = float(np.mean(rates))
    _do_log(
        {
            "S": ens.size,
            "blocks": len(ens.history),
            "sigma": float(sigma),
            "acceptance": ens.last_acceptance_rate,
        },
        title="*** Resampled ensemble",
    )
    return ens
