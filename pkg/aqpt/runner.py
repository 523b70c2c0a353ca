"""
Closed-loop tomography runs and experiment sweeps.

A run alternates planning, simulated measurement, Bayesian update and,
when the effective sample size collapses, resampling. Checkpoints are taken
on a logarithmic grid of event counts shared by every run, so traces of
different runs line up without interpolation.
"""

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from aqpt import app_config
from aqpt.adaptive_planner import PlannerConfig, Strategy, block_size, next_config
from aqpt.app_utils import _do_log, get_first_non_none, json_dumps, write_atomic
from aqpt.apparatus import (
    MODE_LOSSY,
    MODE_TP,
    Calibration,
    CountRecord,
    NoiseModel,
    calibrate,
    simulate_block_lossy,
    simulate_block_tp,
)
from aqpt.bayes_engine import (
    ParticleEnsemble,
    bme,
    distribution_size,
    effective_sample_size,
    init_ensemble,
    resample,
    should_resample,
    update_weights,
)
from aqpt.channels import ChannelSpec, make_channel, parse_channel_spec
from aqpt.diagnostics import (
    ConvergenceTrace,
    TracePoint,
    aggregate_traces,
    chi_squared,
    plateau_detect,
    power_law_fit,
    r_dd,
)
from aqpt.errors import DegenerateEnsembleError, ValidationError
from aqpt.quantum_core import (
    ChiMatrix,
    average_transmittance,
    choi_fidelity,
    process_distance,
)

QUBIT = 2
FIT_FIELDS = ("d2_truth", "dist_size")
PLATEAU_FIELDS = ("chi2_norm", "d2_truth")


@dataclass(frozen=True)
class RunConfig:
    channel: ChannelSpec = field(default_factory=ChannelSpec.identity)
    mode: str = MODE_TP
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    particles: Optional[int] = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    max_events: int = 10**5
    seed: int = 0
    checkpoints_per_decade: int = field(
        default_factory=lambda: app_config.AQPT_CHECKPOINTS_PER_DECADE
    )
    intensities: Tuple[float, float] = field(
        default_factory=lambda: (app_config.AQPT_INTENSITY, app_config.AQPT_INTENSITY)
    )
    calibration_time: Optional[float] = None
    mh_steps: int = field(default_factory=lambda: app_config.AQPT_MH_STEPS)
    mh_scale: float = field(default_factory=lambda: app_config.AQPT_MH_SCALE)
    resample_threshold: float = field(
        default_factory=lambda: app_config.AQPT_RESAMPLE_THRESHOLD
    )

    def __post_init__(self):
        if self.mode not in (MODE_TP, MODE_LOSSY):
            raise ValidationError(f"mode must be 'tp' or 'lossy', got '{self.mode}'")
        if self.particles is None:
            default = (
                app_config.AQPT_PARTICLES_TP
                if self.mode == MODE_TP
                else app_config.AQPT_PARTICLES_LOSSY
            )
            object.__setattr__(self, "particles", default)
        if int(self.particles) < 2:
            raise ValidationError(f"need at least 2 particles, got {self.particles}")
        if int(self.max_events) < self.planner.b_min:
            raise ValidationError(
                f"max_events {self.max_events} is below b_min {self.planner.b_min}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError(
                f"seed must be a 64-bit unsigned integer: {self.seed}"
            )
        if int(self.checkpoints_per_decade) < 1:
            raise ValidationError("checkpoints_per_decade must be >= 1")
        if int(self.mh_steps) < 0 or float(self.mh_scale) < 0:
            raise ValidationError("mh_steps and mh_scale must be non-negative")
        if self.mode == MODE_TP and not self.channel.trace_preserving:
            raise ValidationError(
                f"channel '{self.channel.label()}' loses light; use mode 'lossy'"
            )
        intensities = Calibration(self.intensities).intensities
        object.__setattr__(self, "intensities", intensities)

    def to_json(self) -> dict:
        return {
            "channel": self.channel.label(),
            "mode": self.mode,
            "strategy": self.planner.strategy.value,
            "pool": self.planner.pool_size,
            "bmin": self.planner.b_min,
            "eta": self.planner.eta,
            "particles": self.particles,
            "noise_deg": self.noise.phi0,
            "retardance_errors": list(self.noise.retardance_errors),
            "max_events": self.max_events,
            "seed": self.seed,
            "checkpoints_per_decade": self.checkpoints_per_decade,
            "intensities": list(self.intensities),
            "calibration_time": self.calibration_time,
            "mh_steps": self.mh_steps,
            "mh_scale": self.mh_scale,
            "resample_threshold": self.resample_threshold,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        """
        Builds a configuration from a JSON object with the keys of
        ``to_json()``; absent keys take the built-in defaults.
        """
        defaults = PlannerConfig()
        try:
            planner = PlannerConfig(
                strategy=obj.get("strategy", Strategy.ADAPTIVE.value),
                pool_size=int(obj.get("pool", defaults.pool_size)),
                b_min=int(obj.get("bmin", defaults.b_min)),
                eta=float(obj.get("eta", defaults.eta)),
            )
            noise = NoiseModel(
                phi0=float(obj.get("noise_deg", 0.0)),
                retardance_errors=tuple(obj.get("retardance_errors", (0.0,) * 4)),
            )
            kwargs = {
                "channel": parse_channel_spec(obj.get("channel", "identity")),
                "mode": obj.get("mode", MODE_TP),
                "planner": planner,
                "noise": noise,
                "particles": obj.get("particles"),
            }
            for key in (
                "max_events",
                "seed",
                "checkpoints_per_decade",
                "mh_steps",
            ):
                if obj.get(key) is not None:
                    kwargs[key] = int(obj[key])
            for key in ("mh_scale", "resample_threshold", "calibration_time"):
                if obj.get(key) is not None:
                    kwargs[key] = float(obj[key])
            if obj.get("intensities") is not None:
                kwargs["intensities"] = tuple(obj["intensities"])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"invalid run configuration: {exc}") from exc
        return cls(**kwargs)


class RunResult(NamedTuple):
    trace: ConvergenceTrace
    estimate: ChiMatrix
    ensemble: ParticleEnsemble
    records: List[CountRecord]
    fidelity: Optional[float] = None


def checkpoint_grid(b_min: int, n_max: int, per_decade: int) -> List[int]:
    """
    Integer event counts spaced ``per_decade`` per decade within
    [b_min, n_max], with n_max always included.
    """
    low = math.floor(per_decade * math.log10(b_min))
    high = math.ceil(per_decade * math.log10(n_max))
    values = {int(round(10 ** (k / per_decade))) for k in range(low, high + 1)}
    values = {v for v in values if b_min <= v <= n_max}
    values.add(int(n_max))
    return sorted(values)


def _stream(seed: int, purpose: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(purpose,))
    return np.random.default_rng(seq)


def run_tomography(
    cfg: RunConfig, on_record: Optional[Callable[[CountRecord], None]] = None
) -> RunResult:
    """
    Runs the measure-update loop until ``cfg.max_events`` events have been
    detected and returns the checkpoint trace, the final mean estimate, the
    final ensemble and the simulated count records.
    """
    plan_rng, lab_rng, engine_rng = (_stream(cfg.seed, k) for k in range(3))
    truth = make_channel(cfg.channel)
    if average_transmittance(truth) == 0.0:
        raise ValidationError(f"channel '{cfg.channel.label()}' transmits no light")

    cal_true = Calibration(cfg.intensities)
    cal_used = calibrate(cal_true, cfg.calibration_time, lab_rng)
    ens = init_ensemble(
        cfg.particles, QUBIT, cfg.mode, engine_rng, calibration=cal_used
    )
    grid = checkpoint_grid(
        cfg.planner.b_min, cfg.max_events, cfg.checkpoints_per_decade
    )

    trace = ConvergenceTrace()
    records = []
    n_events = 0
    emitted = -1
    try:
        while n_events < cfg.max_events:
            config = next_config(ens, cfg.planner, plan_rng)
            b = block_size(n_events, cfg.planner)
            if cfg.mode == MODE_TP:
                b = min(b, cfg.max_events - n_events)
                rec = simulate_block_tp(truth, config, b, cfg.noise, lab_rng)
            else:
                duration = b / cal_used.mean
                rec = simulate_block_lossy(
                    truth, config, duration, cal_true, cfg.noise, lab_rng
                )
            chi2 = chi_squared(rec, bme(ens), cal_used)
            chi2_norm = chi2 / rec.events if rec.events else 0.0

            update_weights(ens, rec)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            n_events += rec.events
            if should_resample(ens, cfg.resample_threshold):
                resample(ens, engine_rng, cfg.mh_steps, cfg.mh_scale)

            # labelled with the largest grid value crossed, not the event count
            reached = int(np.searchsorted(grid, n_events, side="right")) - 1
            if reached > emitted:
                emitted = reached
                trace.append(_checkpoint(ens, truth, grid[reached], chi2_norm))
    except DegenerateEnsembleError as exc:
        exc.details.update({"seed": cfg.seed, "N": n_events, "config": cfg.to_json()})
        raise

    estimate = bme(ens)
    fidelity = None
    if estimate.trace_preserving and truth.trace_preserving:
        fidelity = choi_fidelity(estimate, truth)
    _do_log(
        {"N": n_events, "points": len(trace), "fidelity": fidelity},
        title="*** Run finished",
    )
    return RunResult(trace, estimate, ens, records, fidelity)


def _checkpoint(
    ens: ParticleEnsemble, truth: ChiMatrix, n_value: int, chi2_norm: float
) -> TracePoint:
    estimate = bme(ens)
    size = distribution_size(ens)
    d2 = process_distance(estimate, truth)
    point = TracePoint(
        N=int(n_value),
        dist_size=size,
        chi2_norm=float(chi2_norm),
        ess=effective_sample_size(ens),
        d2_truth=d2,
        r_dd=r_dd(d2, size),
    )
    _do_log(point.to_json(), title="*** Checkpoint")
    return point


@dataclass(frozen=True)
class SweepConfig:
    """
    A grid of runs: every combination of channel, strategy and noise level
    (a cell) repeated ``repeats`` times with one seed per repeat.
    """

    base: RunConfig = field(default_factory=RunConfig)
    noise_levels: Tuple[float, ...] = ()
    strategies: Tuple[str, ...] = ()
    channels: Tuple[str, ...] = ()
    repeats: int = 1
    seeds: Optional[Tuple[int, ...]] = None
    fit_range: Optional[Tuple[float, float]] = None
    plateau_window: int = 5

    def __post_init__(self):
        if int(self.repeats) < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")
        if self.seeds is not None:
            seeds = tuple(int(s) for s in self.seeds)
            if len(seeds) != self.repeats:
                raise ValidationError(
                    f"{len(seeds)} seeds given for {self.repeats} repeats"
                )
            object.__setattr__(self, "seeds", seeds)
        if len(set(self.repeat_seeds())) != self.repeats:
            raise ValidationError("repeat seeds must be distinct")
        if self.fit_range is not None:
            low, high = (float(v) for v in self.fit_range)
            if not 0 < low <= high:
                raise ValidationError(f"invalid fit range {self.fit_range}")
            object.__setattr__(self, "fit_range", (low, high))
        self.cells()

    def repeat_seeds(self) -> List[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [
            int(
                np.random.SeedSequence(self.base.seed, spawn_key=(r,)).generate_state(
                    1, np.uint64
                )[0]
            )
            for r in range(self.repeats)
        ]

    def cells(self) -> List[RunConfig]:
        channels = [parse_channel_spec(c) for c in self.channels] or [self.base.channel]
        strategies = list(self.strategies) or [self.base.planner.strategy.value]
        noise_levels = list(self.noise_levels) or [self.base.noise.phi0]
        return [
            replace(
                self.base,
                channel=channel,
                planner=replace(self.base.planner, strategy=strategy),
                noise=replace(self.base.noise, phi0=float(phi0)),
            )
            for channel, strategy, phi0 in itertools.product(
                channels, strategies, noise_levels
            )
        ]

    @classmethod
    def from_json(cls, obj: dict) -> "SweepConfig":
        try:
            fit_range = obj.get("fit_range")
            seeds = obj.get("seeds")
            return cls(
                base=RunConfig.from_json(obj.get("base", {})),
                noise_levels=tuple(float(v) for v in obj.get("noise_levels", ())),
                strategies=tuple(obj.get("strategies", ())),
                channels=tuple(obj.get("channels", ())),
                repeats=int(obj.get("repeats", 1)),
                seeds=None if seeds is None else tuple(seeds),
                fit_range=None if fit_range is None else tuple(fit_range),
                plateau_window=int(obj.get("plateau_window", 5)),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"invalid sweep configuration: {exc}") from exc


def _run_job(
    job: Tuple[int, int, RunConfig]
) -> Tuple[int, int, str, Optional[float]]:
    cell, repeat, cfg = job
    result = run_tomography(cfg)
    return cell, repeat, result.trace.to_jsonl(), result.fidelity


def _mean_and_stderr(values: Sequence[Optional[float]]) -> Optional[dict]:
    if not values or any(v is None for v in values):
        return None
    values = np.asarray(values, dtype=float)
    stderr = 0.0
    if values.size > 1:
        stderr = float(values.std(ddof=1) / np.sqrt(values.size))
    return {"mean": float(values.mean()), "stderr": stderr}


def _cell_summary(
    cell_cfg: RunConfig, traces, fidelities, seeds, sweep: SweepConfig
) -> dict:
    rows = aggregate_traces(traces)
    fits = {}
    for name in FIT_FIELDS:
        try:
            fits[name] = power_law_fit(
                aggregate_column(rows, name), sweep.fit_range
            ).to_json()
        except ValidationError as exc:
            _do_log({"field": name, "reason": str(exc)}, title="*** Fit skipped")
            fits[name] = None
    plateaus = {
        name: plateau_detect(
            aggregate_column(rows, name), window=sweep.plateau_window
        )
        for name in PLATEAU_FIELDS
    }
    return {
        "channel": cell_cfg.channel.label(),
        "strategy": cell_cfg.planner.strategy.value,
        "noise_deg": cell_cfg.noise.phi0,
        "mode": cell_cfg.mode,
        "repeats": len(traces),
        "seeds": list(seeds),
        "fits": fits,
        "plateau": plateaus,
        "final_r_dd": rows[-1]["r_dd"] if rows else None,
        "final_fidelity": _mean_and_stderr(fidelities),
        "trace": rows,
    }


def run_sweep(
    sweep: SweepConfig, jobs: int = 1, out_dir: Optional[str] = None
) -> dict:
    """
    Runs every (cell, repeat) pair, in parallel worker processes when
    ``jobs`` > 1, and aggregates the traces per cell. With ``out_dir`` the
    individual traces and ``report.json`` are written there.
    """
    cells = sweep.cells()
    seeds = sweep.repeat_seeds()
    work = [
        (c, r, replace(cell_cfg, seed=seed))
        for c, cell_cfg in enumerate(cells)
        for r, seed in enumerate(seeds)
    ]
    _do_log(
        {"cells": len(cells), "repeats": sweep.repeats, "jobs": jobs},
        title="*** Starting sweep",
    )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(job) for job in work]

    traces = {c: {} for c in range(len(cells))}
    fidelities = {c: {} for c in range(len(cells))}
    for cell, repeat, text, fidelity in results:
        traces[cell][repeat] = ConvergenceTrace.from_jsonl(text)
        fidelities[cell][repeat] = fidelity
        if out_dir is not None:
            path = os.path.join(
                out_dir, f"cell-{cell:02d}", f"run-{repeat:03d}.jsonl"
            )
            write_atomic(path, text)

    report = {
        "cells": [
            _cell_summary(
                cell_cfg,
                [traces[c][r] for r in sorted(traces[c])],
                [fidelities[c][r] for r in sorted(fidelities[c])],
                seeds,
                sweep,
            )
            for c, cell_cfg in enumerate(cells)
        ],
        "fit_range": list(sweep.fit_range) if sweep.fit_range else None,
    }
    if out_dir is not None:
        write_atomic(os.path.join(out_dir, "report.json"), json_dumps(report))
    return report


def planner_from_args(
    strategy: Optional[str] = None,
    pool: Optional[int] = None,
    b_min: Optional[int] = None,
    eta: Optional[float] = None,
) -> PlannerConfig:
    """Planner settings with command-line values taking precedence."""
    return PlannerConfig(
        strategy=get_first_non_none(strategy, Strategy.ADAPTIVE.value),
        pool_size=get_first_non_none(pool, app_config.AQPT_POOL_SIZE),
        b_min=get_first_non_none(b_min, app_config.AQPT_BMIN),
        eta=get_first_non_none(eta, app_config.AQPT_ETA),
    )


def aggregate_column(
    rows: Sequence[dict], name: str
) -> List[Tuple[int, Optional[float]]]:
    return [(row["N"], row[name]) for row in rows]
