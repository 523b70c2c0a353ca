"""
Convergence diagnostics: the χ² statistic of a block against the current
estimate, plateau detection on log-log curves, power-law fits and traces of
checkpoints.
"""

import json
import os
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from aqpt.app_utils import json_dumps, write_atomic
from aqpt.apparatus import MODE_TP, Calibration, CountRecord, config_ops, probabilities
from aqpt.errors import ValidationError
from aqpt.quantum_core import ChiMatrix

PROB_FLOOR = 1e-9
RDD_MIN_SIZE = 1e-15
DEFAULT_SLOPE_THRESHOLD = -0.25
DEFAULT_SMOOTHING = 5
DEFAULT_WINDOW = 5

TRACE_FIELDS = ("d2_truth", "dist_size", "chi2_norm", "r_dd", "ess")


def _optional_float(value) -> Optional[float]:
    return None if value is None else float(value)


@dataclass(frozen=True)
class TracePoint:
    N: int
    dist_size: float
    chi2_norm: float
    ess: float
    d2_truth: Optional[float] = None
    r_dd: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "d2_truth": self.d2_truth,
            "dist_size": self.dist_size,
            "chi2_norm": self.chi2_norm,
            "r_dd": self.r_dd,
            "ess": self.ess,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TracePoint":
        try:
            return cls(
                N=int(obj["N"]),
                dist_size=float(obj["dist_size"]),
                chi2_norm=float(obj["chi2_norm"]),
                ess=float(obj["ess"]),
                d2_truth=_optional_float(obj.get("d2_truth")),
                r_dd=_optional_float(obj.get("r_dd")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed trace point: {obj}") from exc


class ConvergenceTrace:
    """Checkpoints of one run, ordered by strictly increasing N."""

    def __init__(self, points: Iterable[TracePoint] = ()):
        self.points: List[TracePoint] = []
        for point in points:
            self.append(point)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def append(self, point: TracePoint):
        if self.points and point.N <= self.points[-1].N:
            raise ValidationError(
                f"trace N must increase strictly: {point.N} after {self.points[-1].N}"
            )
        self.points.append(point)

    @property
    def n_values(self) -> np.ndarray:
        return np.array([p.N for p in self.points], dtype=float)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_FIELDS:
            raise ValidationError(f"unknown trace field '{name}'")
        values = [getattr(p, name) for p in self.points]
        return np.array([np.nan if v is None else v for v in values], dtype=float)

    def series(self, name: str) -> List[Tuple[float, Optional[float]]]:
        return [(p.N, getattr(p, name)) for p in self.points]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(p.to_json()) + "\n" for p in self.points)

    @classmethod
    def from_jsonl(cls, text: str) -> "ConvergenceTrace":
        points = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                points.append(TracePoint.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {number} is not valid JSON") from exc
        return cls(points)

    def write(self, path: str):
        write_atomic(path, self.to_jsonl())

    @classmethod
    def read(cls, path: str) -> "ConvergenceTrace":
        if not os.path.isfile(path):
            raise ValidationError(f"trace file '{path}' does not exist")
        with open(path, encoding="utf-8") as handle:
            return cls.from_jsonl(handle.read())


@dataclass(frozen=True)
class PowerLawFit:
    """y ≈ C·N^alpha fitted by least squares in log-log space."""

    C: float
    alpha: float
    stderr_C: float
    stderr_alpha: float
    n_points: int
    range: Tuple[float, float]

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["range"] = list(self.range)
        return obj


def chi_squared(
    rec: CountRecord, chi_hat: ChiMatrix, calibration: Optional[Calibration] = None
) -> float:
    """
    Σ_γ (n_γ − b·p̂_γ)² / (b·p̂_γ) for a block against the outcome
    probabilities predicted by ``chi_hat``. For lossy records p̂ is the
    detection-rate-weighted outcome distribution and b the number of events.
    """
    probs = probabilities(chi_hat.mat[None], config_ops(rec.config))[0]
    probs = np.clip(probs, 0.0, 1.0)
    if rec.mode == MODE_TP:
        p_hat = np.array([probs[0], 1.0 - probs[0]])
        b = rec.b
    else:
        intensities = np.asarray((calibration or Calibration()).intensities)
        rates = intensities * probs
        total = rates.sum()
        p_hat = rates / total if total > 0 else np.full(2, 0.5)
        b = rec.events
    if b == 0:
        return 0.0
    p_hat = np.maximum(p_hat, PROB_FLOOR)
    expected = b * p_hat
    return float(np.sum((np.asarray(rec.counts) - expected) ** 2 / expected))


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over ``window`` consecutive values ("valid" part only)."""
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    values = np.asarray(values, dtype=float)
    if values.size < window:
        return np.empty(0)
    return np.convolve(values, np.ones(window) / window, mode="valid")


def _clean(points: Iterable[Tuple[float, Optional[float]]]):
    kept = [(n, y) for n, y in points if y is not None and np.isfinite(y) and y > 0]
    n_values = np.array([n for n, _ in kept], dtype=float)
    y_values = np.array([y for _, y in kept], dtype=float)
    return n_values, y_values


def plateau_detect(
    points: Iterable[Tuple[float, Optional[float]]],
    window: int = DEFAULT_WINDOW,
    slope_thresh: float = DEFAULT_SLOPE_THRESHOLD,
    smoothing: int = DEFAULT_SMOOTHING,
) -> Optional[float]:
    """
    Smallest N at which the double-logarithmic slope of the smoothed curve,
    averaged over ``window`` consecutive checkpoints, exceeds
    ``slope_thresh``. Returns None when this never happens or when the curve
    is too short. Points with a missing or non-positive value are skipped.
    """
    n_values, y_values = _clean(points)
    smoothed = moving_average(y_values, smoothing)
    if smoothed.size < 2:
        return None
    n_aligned = n_values[smoothing - 1 :]
    slopes = np.diff(np.log(smoothed)) / np.diff(np.log(n_aligned))
    averaged = moving_average(slopes, window)
    hits = np.nonzero(averaged > slope_thresh)[0]
    if hits.size == 0:
        return None
    return float(n_aligned[hits[0] + window])


def power_law_fit(
    points: Iterable[Tuple[float, Optional[float]]],
    n_range: Optional[Tuple[float, float]] = None,
) -> PowerLawFit:
    """
    Fits y = C·N^alpha by ordinary least squares of log y on log N over the
    points with N inside ``n_range`` (inclusive). Missing and non-positive
    values are skipped; at least three points must remain.
    """
    n_values, y_values = _clean(points)
    if n_range is not None:
        low, high = n_range
        if low > high:
            raise ValidationError(f"empty fit range {n_range}")
        inside = (n_values >= low) & (n_values <= high)
        n_values, y_values = n_values[inside], y_values[inside]
    if n_values.size < 3:
        raise ValidationError(f"power-law fit needs 3 points, got {n_values.size}")
    if np.unique(n_values).size < 2:
        raise ValidationError("power-law fit needs at least two distinct N values")

    result = linregress(np.log(n_values), np.log(y_values))
    c = float(np.exp(result.intercept))
    return PowerLawFit(
        C=c,
        alpha=float(result.slope),
        stderr_C=float(c * result.intercept_stderr),
        stderr_alpha=float(result.stderr),
        n_points=int(n_values.size),
        range=(float(n_values.min()), float(n_values.max())),
    )


def r_dd(d2_truth: Optional[float], dist_size: float) -> Optional[float]:
    """Ratio d²_B(χ̂, χ₀) / d̄²_B, or None without truth or spread."""
    if d2_truth is None or dist_size is None or dist_size < RDD_MIN_SIZE:
        return None
    return float(d2_truth / dist_size)


def aggregate_traces(traces: Sequence[ConvergenceTrace]) -> List[dict]:
    """
    Mean and standard error of every field across runs, per checkpoint N.
    Missing values are left out of the statistics of their field.
    """
    if not traces:
        raise ValidationError("nothing to aggregate")
    by_n = {}
    for trace in traces:
        for point in trace:
            by_n.setdefault(point.N, []).append(point)

    rows = []
    for n in sorted(by_n):
        group = by_n[n]
        row = {"N": n, "n_runs": len(group)}
        for name in TRACE_FIELDS:
            values = np.array(
                [getattr(p, name) for p in group if getattr(p, name) is not None]
            )
            if values.size == 0:
                row[name], row[f"{name}_stderr"] = None, None
                continue
            row[name] = float(values.mean())
            stderr = 0.0
            if values.size > 1:
                stderr = float(values.std(ddof=1) / np.sqrt(values.size))
            row[f"{name}_stderr"] = stderr
        rows.append(row)
    return rows


def fit_report(fit: PowerLawFit) -> str:
    return json_dumps(fit.to_json())
