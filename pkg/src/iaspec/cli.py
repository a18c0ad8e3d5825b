"""Command line front end.

One scenario file per invocation; every run emits tidy CSV/JSON files for
external plotting plus a manifest with checksums of everything written.
Exit codes: 0 success, 1 malformed input or invalid scenario, 2 fit error,
3 no usable fringe peak.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigurationError,
    DomainError,
    FitError,
    IasRunError,
    NoPeakError,
)
from .estimator import estimate_frequency, fringe_sweep, ias_run
from .model import SpectroscopyData, fit_avoided_crossing
from .pulse import build_sequence_waveform, apply_bandwidth_filter
from .scenario import Scenario, load_scenario
from .sensing import reference_comparison, run_perturbation_experiment

TWO_PI = 2.0 * math.pi


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value)}")


class Emission:
    """Collects output files so the manifest can list them all."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def register(self, name: str) -> None:
        self.files[name] = _sha256(self.path(name))

    def write_json(self, name: str, payload) -> None:
        text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
        self.path(name).write_text(text + "\n")
        self.register(name)

    def write_rows(self, name: str, header, rows) -> None:
        with self.path(name).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        self.register(name)

    def write_manifest(self, scenario_name: str, scenario_sha256: str, seed: int) -> None:
        payload = {
            "version": __version__,
            "scenario_name": scenario_name,
            "scenario_sha256": scenario_sha256,
            "seed": seed,
            "wall_clock_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": dict(sorted(self.files.items())),
        }
        text = json.dumps(payload, sort_keys=True, indent=2)
        self.path("manifest.json").write_text(text + "\n")


def _resolve_out(args, default_name: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path("out") / default_name


def _resolve_seed(args, scenario: Scenario | None = None) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed must be a non-negative integer")
        return args.seed
    return scenario.seed if scenario is not None else 0


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _load(args, kind: str) -> Scenario:
    scenario = load_scenario(args.scenario, repeats_override=args.repeats)
    if scenario.kind != kind:
        raise ConfigurationError(
            f"{args.scenario}: scenario kind is {scenario.kind!r}, "
            f"this subcommand needs {kind!r}"
        )
    return scenario


def cmd_fit_spectrum(args) -> int:
    data = SpectroscopyData.from_csv(args.input)
    emission = Emission(_resolve_out(args, "fit_spectrum"))
    try:
        model, report = fit_avoided_crossing(data)
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return 2
    payload = {
        "model": {
            "oop_center_hz": model.oop.center_frequency / TWO_PI,
            "ip_center_hz": model.ip.center_frequency / TWO_PI,
            "oop_coefficient_hz_per_v2": model.oop.coefficient / TWO_PI,
            "ip_coefficient_hz_per_v2": model.ip.coefficient / TWO_PI,
            "center_voltage_v": model.oop.center_voltage,
            "splitting_hz": model.splitting / TWO_PI,
        },
        "report": {
            "residual_rms_hz": report.residual_rms_hz,
            "stderr": report.stderr,
            "n_points": report.n_points,
            "n_iterations": report.n_iterations,
            "converged": report.converged,
            "assignments": report.assignments,
        },
    }
    emission.write_json("fit.json", payload)
    emission.write_manifest(Path(args.input).stem, _sha256(Path(args.input)), 0)
    print(
        f"fit converged: splitting {payload['model']['splitting_hz']:.6g} Hz, "
        f"residual rms {report.residual_rms_hz:.3g} Hz"
    )
    return 0


def _emit_iteration_files(emission: Emission, records) -> None:
    for rec in records:
        stem = f"iteration_{rec.iteration:02d}"
        if rec.trace is not None:
            rec.trace.to_csv(emission.path(f"{stem}_trace.csv"))
            emission.register(f"{stem}_trace.csv")
            rec.trace.write_sidecar(emission.path(f"{stem}_trace.json"))
            emission.register(f"{stem}_trace.json")
        if rec.record is not None and rec.record.frequency_grid_hz is not None:
            emission.write_rows(
                f"{stem}_spectrum.csv",
                ["frequency_hz", "magnitude"],
                [
                    [_fmt(float(f)), _fmt(float(m))]
                    for f, m in zip(rec.record.frequency_grid_hz, rec.record.magnitude)
                ],
            )


def cmd_run_ias(args) -> int:
    scenario = _load(args, "ias")
    seed = _resolve_seed(args, scenario)
    max_iterations = (
        args.max_iterations if args.max_iterations is not None else scenario.max_iterations
    )
    emission = Emission(_resolve_out(args, scenario.name))
    exit_code = 0
    if max_iterations > 0:
        try:
            result = ias_run(
                scenario.design,
                prior=scenario.prior,
                seed=seed,
                max_iterations=max_iterations,
                options=scenario.processing,
            )
            records = result.records
            payload = {"scenario": scenario.name, "seed": seed, "result": result.summary()}
            print(
                f"estimate {result.estimate_hz:.6g} Hz "
                f"+- {result.uncertainty / TWO_PI:.3g} Hz after {result.iterations} "
                f"iterations (converged: {result.converged})"
            )
        except IasRunError as exc:
            records = exc.records
            payload = {
                "scenario": scenario.name,
                "seed": seed,
                "error": str(exc),
                "records": [r.summary() for r in records],
            }
            print(f"run aborted: {exc}", file=sys.stderr)
            exit_code = 3
        _emit_iteration_files(emission, records)
        emission.write_json("records.json", payload)
    emission.write_manifest(scenario.name, _sha256(Path(args.scenario)), seed)
    return exit_code


def cmd_fringe_sweep(args) -> int:
    scenario = _load(args, "fringe_sweep")
    seed = _resolve_seed(args, scenario)
    counts = args.fringes if args.fringes else scenario.sweep_fringe_counts
    if not counts:
        raise ConfigurationError("no fringe counts given (flag --fringes or sweep section)")
    emission = Emission(_resolve_out(args, scenario.name))
    rows = fringe_sweep(
        scenario.design,
        prior=scenario.prior,
        fringe_counts=counts,
        seed=seed,
        iterations=scenario.sweep_iterations,
        options=scenario.processing,
    )
    header = [
        "fringes",
        "iterations",
        "raw_hz",
        "raw_std_hz",
        "raw_bin_hz",
        "processed_hz",
        "processed_std_hz",
        "processed_bin_hz",
        "processed_error",
    ]
    emission.write_rows(
        "sweep.csv", header, [[_fmt(row[key]) for key in header] for row in rows]
    )
    emission.write_json("sweep.json", {"scenario": scenario.name, "seed": seed, "rows": rows})
    emission.write_manifest(scenario.name, _sha256(Path(args.scenario)), seed)
    for row in rows:
        processed = (
            f"{row['processed_hz']:.6g} Hz" if row["processed_hz"] is not None
            else f"({row['processed_error']})"
        )
        print(f"n={row['fringes']:>3d}  raw {row['raw_hz']:.6g} Hz  processed {processed}")
    return 0


def cmd_sense(args) -> int:
    scenario = _load(args, "perturbation")
    seed = _resolve_seed(args, scenario)
    emission = Emission(_resolve_out(args, scenario.name))
    report = run_perturbation_experiment(
        scenario.perturbation, seed=seed, options=scenario.processing
    )
    report["reference_comparison"] = reference_comparison(scenario.charge)
    if scenario.telegraph is not None and scenario.telegraph.enabled:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(99,)))
        name = "telegraph_switching.csv"
        scenario.telegraph.write_trace(
            emission.path(name),
            duration=20.0 / scenario.telegraph.rate_hz,
            dt=0.05 / scenario.telegraph.rate_hz,
            rng=rng,
        )
        emission.register(name)
        report["telegraph_trace"] = name
    emission.write_json("report.json", report)
    emission.write_manifest(scenario.name, _sha256(Path(args.scenario)), seed)
    print(
        f"shift {report['shift_hz']:.6g} Hz -> "
        f"{report['charge_density_C_per_m3']:.6g} C/m^3, "
        f"{report['electron_equivalent']:.6g} elementary charges"
    )
    for flag in report["flags"]:
        print(f"flag: {flag}")
    return 0


def cmd_show_pulse(args) -> int:
    scenario = load_scenario(args.scenario, repeats_override=args.repeats)
    seed = _resolve_seed(args, scenario)
    design = scenario.design
    emission = Emission(_resolve_out(args, scenario.name))
    wait = args.wait_fringes * TWO_PI / scenario.prior
    info: dict = {"scenario": scenario.name, "prior_hz": scenario.prior_hz}
    kinds = [design.kind] if design.kind != "corrected" else ["corrected", "soft"]
    for kind in kinds:
        if kind == "ideal":
            continue
        lead = trail = None
        if kind == "corrected":
            lead, trail = design.optimize_edges(scenario.prior)
            info["correction"] = {
                "lead": {"c": lead.c, "d": lead.d, "infidelity": lead.infidelity,
                         "soft_infidelity": lead.soft_infidelity},
                "trail": {"c": trail.c, "d": trail.d, "infidelity": trail.infidelity,
                          "soft_infidelity": trail.soft_infidelity},
            }
        ramp = design.ramp_for(scenario.prior, lead, trail)
        if kind == "soft":
            ramp = ramp if design.kind == "soft" else _soft_copy(ramp)
        shaped = ramp.with_wait(wait)
        sample_period = shaped.edge_duration / 2000.0
        waveform = build_sequence_waveform(
            shaped, design.tuning, sample_period, margin=0.25 * shaped.edge_duration
        )
        name = f"pulse_{kind}.csv"
        waveform.to_csv(emission.path(name))
        emission.register(name)
        if design.bandwidth_filter is not None:
            filtered = apply_bandwidth_filter(waveform, design.bandwidth_filter, design.tuning)
            filtered_name = f"pulse_{kind}_filtered.csv"
            filtered.to_csv(emission.path(filtered_name))
            emission.register(filtered_name)
        info[f"ramp_{kind}"] = {
            "t0": shaped.t0, "ts": shaped.ts, "tf": shaped.tf, "tr": shaped.tr,
            "u_initial": shaped.u_initial, "u_final": shaped.u_final,
            "u_readout": shaped.u_readout,
            "c": shaped.c, "d": shaped.d,
            "c_trail": shaped.c_trail, "d_trail": shaped.d_trail,
            "kind": shaped.kind,
        }
    emission.write_json("pulse.json", info)
    emission.write_manifest(scenario.name, _sha256(Path(args.scenario)), seed)
    print(f"wrote waveforms for {scenario.name} to {emission.out_dir}")
    return 0


def _soft_copy(ramp):
    from dataclasses import replace

    return replace(ramp, c=0.0, d=0.0, c_trail=0.0, d_trail=0.0, kind="soft")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="master seed; overrides the scenario's seed")
    common.add_argument("--out", type=str, default=None, metavar="DIR",
                        help="output directory (default: out/<scenario name>)")
    common.add_argument("--repeats", type=int, default=None, metavar="K",
                        help="override the scenario's repeats per grid point")

    parser = argparse.ArgumentParser(
        prog="iaspec",
        description="Simulate and estimate the splitting of a voltage-tunable "
                    "two-mode resonator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("fit-spectrum", parents=[common],
                       help="fit the avoided-crossing tuning model to a spectroscopy CSV")
    p.add_argument("input", help="CSV with columns voltage_V,frequency_Hz,branch")
    p.set_defaults(func=cmd_fit_spectrum)

    p = sub.add_parser("run-ias", parents=[common],
                       help="run the iterative splitting estimation on a scenario")
    p.add_argument("scenario", help="scenario JSON file of kind 'ias'")
    p.add_argument("--max-iterations", type=int, default=None,
                   help="override the scenario's iteration cap")
    p.set_defaults(func=cmd_run_ias)

    p = sub.add_parser("fringe-sweep", parents=[common],
                       help="estimate quality versus number of measured fringes")
    p.add_argument("scenario", help="scenario JSON file of kind 'fringe_sweep'")
    p.add_argument("--fringes", type=int, nargs="*", default=None,
                   help="fringe counts to sweep (default: scenario's sweep section)")
    p.set_defaults(func=cmd_fringe_sweep)

    p = sub.add_parser("sense", parents=[common],
                       help="run a charge-step perturbation experiment")
    p.add_argument("scenario", help="scenario JSON file of kind 'perturbation'")
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("show-pulse", parents=[common],
                       help="dump the scenario's pulse waveform(s) as CSV")
    p.add_argument("scenario", help="any scenario JSON file")
    p.add_argument("--wait-fringes", type=float, default=1.0,
                   help="plateau length in expected fringe periods (default 1)")
    p.set_defaults(func=cmd_show_pulse)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return 2
    except (NoPeakError, IasRunError) as exc:
        print(f"no usable fringe peak: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
