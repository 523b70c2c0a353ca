"""
Command-line interface: ``aqpt run``, ``aqpt sweep``, ``aqpt fit`` and
``aqpt channel-info``.

Settings follow the precedence command-line flag > environment variable >
built-in default; environment variables are read by ``aqpt.app_config``.
"""

import argparse
import json
import math
import sys
from typing import Optional, Sequence

from aqpt import __version__, app_config
from aqpt.app_utils import get_first_non_none, json_dumps, write_atomic
from aqpt.apparatus import MODE_LOSSY, MODE_TP, NoiseModel
from aqpt.base_command_handler import EXIT_VALIDATION, BaseCommandHandler
from aqpt.channels import (
    channel_summary,
    fit_waveplate,
    make_channel,
    parse_channel_spec,
)
from aqpt.diagnostics import TRACE_FIELDS, ConvergenceTrace, power_law_fit
from aqpt.errors import NotAWaveplateError, ValidationError
from aqpt.quantum_core import chi_from_json, chi_to_json
from aqpt.runner import (
    RunConfig,
    SweepConfig,
    planner_from_args,
    run_sweep,
    run_tomography,
)


class _ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as ``ValidationError`` instead of exiting."""

    def error(self, message):
        raise ValidationError(message)


def parse_range(text: Optional[str]):
    """Parses ``NMIN:NMAX``; either bound may be left empty."""
    if text is None:
        return None
    low, sep, high = text.partition(":")
    if not sep:
        raise ValidationError(f"range must look like NMIN:NMAX, got '{text}'")
    try:
        low = float(low) if low.strip() else 0.0
        high = float(high) if high.strip() else math.inf
    except ValueError as exc:
        raise ValidationError(f"range bounds must be numbers: '{text}'") from exc
    if low > high:
        raise ValidationError(f"empty range '{text}'")
    return low, high


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError as exc:
        raise ValidationError(f"file '{path}' does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"file '{path}' is not valid JSON: {exc}") from exc


class RunCommand(BaseCommandHandler):
    """Runs one simulated tomography and writes its trace."""

    def _before_handle(self):
        a = self.args
        mode = get_first_non_none(a.mode, MODE_TP)
        self.config = RunConfig(
            channel=parse_channel_spec(a.channel),
            mode=mode,
            planner=planner_from_args(a.strategy, a.pool, a.bmin, a.eta),
            particles=a.particles,
            noise=NoiseModel(phi0=get_first_non_none(a.noise_deg, 0.0)),
            max_events=get_first_non_none(a.max_events, 10**5),
            seed=get_first_non_none(a.seed, 0),
        )
        self.records = []

    def _handle(self):
        on_record = self.records.append if self.args.records else None
        return run_tomography(self.config, on_record=on_record)

    def _after_handle(self):
        result = self.job_return
        self.write_output(self.args.out, result.trace.to_jsonl())
        if self.args.records:
            lines = "".join(json.dumps(r.to_json()) + "\n" for r in self.records)
            write_atomic(self.args.records, lines)
        if self.args.snapshot:
            write_atomic(self.args.snapshot, json_dumps(result.ensemble.snapshot()))
        if self.args.chi_out:
            write_atomic(self.args.chi_out, json_dumps(chi_to_json(result.estimate)))


class SweepCommand(BaseCommandHandler):
    """Runs a grid of tomographies described by a JSON file."""

    def _validate(self) -> bool:
        if self.args.jobs < 1:
            self.print_error("--jobs must be >= 1")
            return False
        return True

    def _before_handle(self):
        self.sweep = SweepConfig.from_json(_read_json(self.args.config))

    def _handle(self):
        return run_sweep(self.sweep, jobs=self.args.jobs, out_dir=self.args.out_dir)


class FitCommand(BaseCommandHandler):
    """Fits C·N^alpha to one column of a trace file."""

    def _handle(self):
        trace = ConvergenceTrace.read(self.args.input)
        return power_law_fit(
            trace.series(self.args.field), parse_range(self.args.range)
        )

    def _after_handle(self):
        self.write_output(self.args.out, json_dumps(self.job_return.to_json()))


class ChannelInfoCommand(BaseCommandHandler):
    """
    Prints the χ-matrix and figures of merit of a reference channel, or of a
    χ-matrix read from a file, with the closest wave plate when the process
    is trace-preserving.
    """

    def _handle(self):
        if self.args.chi:
            chi = chi_from_json(_read_json(self.args.chi), sanitize=True)
            info = {"spec": None, "chi": chi_to_json(chi)}
        else:
            spec = parse_channel_spec(self.args.spec)
            chi = make_channel(spec)
            info = {"spec": spec.label(), "chi": chi_to_json(chi)}
        info.update(channel_summary(chi))
        info["waveplate"] = None
        if chi.trace_preserving:
            try:
                info["waveplate"] = fit_waveplate(chi)._asdict()
            except NotAWaveplateError:
                pass
        return info

    def _after_handle(self):
        self.write_output(None, json_dumps(self.job_return))


COMMANDS = {
    "run": RunCommand,
    "sweep": SweepCommand,
    "fit": FitCommand,
    "channel-info": ChannelInfoCommand,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="aqpt", description="Bayesian adaptive process tomography simulator"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate one tomography run")
    run.add_argument(
        "--channel", default="identity", help="Channel spec, e.g. depol:0.5"
    )
    run.add_argument("--mode", choices=[MODE_TP, MODE_LOSSY])
    run.add_argument("--strategy", choices=["adaptive", "random"])
    run.add_argument(
        "--particles",
        type=int,
        help="Sample count (default AQPT_PARTICLES_TP or AQPT_PARTICLES_LOSSY)",
    )
    run.add_argument(
        "--pool",
        type=int,
        help=f"Candidate pool size (default {app_config.AQPT_POOL_SIZE})",
    )
    run.add_argument(
        "--bmin", type=int, help=f"Block-size floor (default {app_config.AQPT_BMIN})"
    )
    run.add_argument(
        "--eta", type=float, help=f"Block-size ratio (default {app_config.AQPT_ETA})"
    )
    run.add_argument(
        "--noise-deg", type=float, help="Wave-plate angle jitter half-width"
    )
    run.add_argument("--max-events", type=int, help="Stop after this many events")
    run.add_argument("--seed", type=int, help="Seed of the run")
    run.add_argument("--out", help="Trace output (JSONL); stdout when omitted")
    run.add_argument("--records", help="Write the count records (JSONL) here")
    run.add_argument("--snapshot", help="Write the final ensemble (JSON) here")
    run.add_argument("--chi-out", help="Write the final estimate (JSON) here")

    sweep = sub.add_parser("sweep", help="Run a grid of tomographies")
    sweep.add_argument("--config", required=True, help="Sweep configuration (JSON)")
    sweep.add_argument("--jobs", type=int, default=1, help="Worker processes")
    sweep.add_argument("--out-dir", required=True, help="Output directory")

    fit = sub.add_parser("fit", help="Fit a power law to a trace")
    fit.add_argument("--in", dest="input", required=True, help="Trace file (JSONL)")
    fit.add_argument("--range", help="NMIN:NMAX, inclusive")
    fit.add_argument("--field", choices=list(TRACE_FIELDS), default="d2_truth")
    fit.add_argument("--out", help="Fit report output (JSON); stdout when omitted")

    info = sub.add_parser("channel-info", help="Describe a channel")
    source = info.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "spec", nargs="?", help="Channel spec, e.g. waveplate:45,1.5708"
    )
    source.add_argument("--chi", help="chi-matrix file (JSON), e.g. from run --chi-out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        parser.print_usage(sys.stderr)
        print(f"aqpt: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return COMMANDS[args.command]()(args)
