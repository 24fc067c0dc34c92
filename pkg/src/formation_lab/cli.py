"""Command-line front end: scenario ingestion, runs, sweeps, verification.

Usage:

    formation-lab rigidity --scenario <file|builtin> [--out DIR]
    formation-lab simulate --scenario <file|builtin> [--out DIR] [--seed N]
    formation-lab sweep    --scenario <file|builtin> [--omega-list W ...] [--out DIR] [--seed N]
    formation-lab verify   --scenario <file|builtin> [--out DIR] [--seed N]

Reports are JSON with every numeric entry tagged by the producing
operation and the scenario's configuration hash; trajectory and energy
data are CSV.  All outputs are written atomically (temp file + rename)
and are bit-identical across runs of the same scenario and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import averaging as avg
from . import dynamics as dyn
from . import verification
from .dynamics import DivergenceError
from .rigidity import UnsupportedFrameworkError
from .scenario import (
    SCHEMA_VERSION,
    Scenario,
    ScenarioValidationError,
    builtin_scenarios,
    load_scenario,
    run_scenario,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2


def write_text_atomic(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows) -> str:
    return "\n".join(",".join(str(c) for c in row) for row in rows) + "\n"


def tag(op: str, config_hash: str, value):
    """Report entry: a value plus the operation and configuration that produced it."""
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, np.ndarray):
        value = value.tolist()
    return {"value": value, "op": op, "config_hash": config_hash}


def tag_tree(op: str, config_hash: str, obj):
    """Tag every numeric leaf of a nested dict/list structure."""
    if isinstance(obj, dict):
        return {k: tag_tree(f"{op}.{k}", config_hash, v) for k, v in obj.items()}
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (list, tuple)):
        if all(isinstance(x, (int, float, np.floating, np.integer)) for x in obj):
            return tag(op, config_hash, list(obj))
        return [tag_tree(f"{op}[{i}]", config_hash, v) for i, v in enumerate(obj)]
    return tag(op, config_hash, obj)


def report_skeleton(scenario: Scenario, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "scenario": scenario.name,
        "config_hash": scenario.config_hash,
        "seed": scenario.seed,
    }


def cmd_rigidity(scenario: Scenario, out_dir: Path | None) -> int:
    try:
        result = verification.check_rigidity(scenario)
    except UnsupportedFrameworkError as exc:
        print(f"unsupported framework: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = report_skeleton(scenario, "rigidity")
    report["rigidity"] = tag_tree("is_infinitesimally_rigid", scenario.config_hash, result)
    verdict = "infinitesimally rigid" if result["passed"] else "NOT infinitesimally rigid"
    print(
        f"{scenario.name}: {verdict} at the {result['configuration']} configuration "
        f"(rank {result['rank']} of {result['required_rank']})"
    )
    if out_dir is not None:
        write_text_atomic(out_dir / f"{scenario.name}-rigidity.json", json.dumps(report, indent=2))
    return EXIT_OK if result["passed"] else EXIT_CHECK_FAILED


def cmd_simulate(scenario: Scenario, out_dir: Path) -> int:
    try:
        traj = run_scenario(scenario)
    except DivergenceError as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    trace = dyn.energy_trace(scenario.spec, traj)
    write_text_atomic(
        out_dir / f"{scenario.name}-trajectory.csv",
        csv_text(dyn.trajectory_csv_rows(scenario.spec, traj, trace)),
    )
    write_text_atomic(
        out_dir / f"{scenario.name}-energy.csv",
        csv_text(dyn.energy_csv_rows(trace)),
    )
    horizon = float(traj.times[-1] - traj.times[0])
    lo_frac, hi_frac = scenario.fit_window_fraction
    window = (
        float(traj.times[0]) + lo_frac * horizon,
        float(traj.times[0]) + hi_frac * horizon,
    )
    report = report_skeleton(scenario, "simulate")
    h = traj.metadata.get("step")
    report["run"] = {
        "controller_kind": scenario.controller_kind,
        "step": tag("integrate", scenario.config_hash, h),
        "samples": tag("integrate", scenario.config_hash, len(traj)),
        "initial_energy": tag("total_energy", scenario.config_hash, float(trace.total[0])),
        "final_energy": tag("total_energy", scenario.config_hash, float(trace.total[-1])),
        "tail_mean_energy": tag(
            "energy_trace",
            scenario.config_hash,
            float(np.mean(trace.window(window[0] + 0.6 * (window[1] - window[0]), window[1]).total)),
        ),
    }
    try:
        fit = dyn.fit_exponential(trace, window)
        report["decay_fit"] = {
            "window": tag("fit_exponential", scenario.config_hash, list(fit.window)),
            "rate": tag("fit_exponential", scenario.config_hash, fit.rate),
            "amplitude": tag("fit_exponential", scenario.config_hash, fit.amplitude),
            "r_squared": tag("fit_exponential", scenario.config_hash, fit.r_squared),
        }
        print(
            f"{scenario.name}: E {trace.total[0]:.6g} -> {trace.total[-1]:.6g}, "
            f"fitted decay rate {fit.rate:.4g} (R^2 = {fit.r_squared:.4f})"
        )
    except ValueError as exc:
        report["decay_fit"] = {"error": str(exc)}
        print(f"{scenario.name}: E {trace.total[0]:.6g} -> {trace.total[-1]:.6g} (no decay fit: {exc})")
    write_text_atomic(out_dir / f"{scenario.name}-summary.json", json.dumps(report, indent=2))
    return EXIT_OK


def cmd_sweep(scenario: Scenario, omega_list, out_dir: Path) -> int:
    if scenario.distance_config is None:
        print("sweep needs a distance-measuring controller", file=sys.stderr)
        return EXIT_INVALID
    omegas = [float(w) for w in omega_list]
    result = avg.sweep_omega(
        scenario.spec,
        scenario.frames,
        scenario.distance_config,
        scenario.initial,
        omegas,
        horizon=scenario.integrator.horizon,
        base_step=scenario.integrator.step,
        samples_per_period=scenario.integrator.samples_per_period,
    )
    report = report_skeleton(scenario, "sweep")
    report["tail_window"] = tag("sweep_omega", scenario.config_hash, list(result.tail_window))
    report["slope"] = tag("sweep_omega", scenario.config_hash, result.slope)
    report["entries"] = [
        tag_tree("sweep_omega", scenario.config_hash, dataclasses.asdict(e))
        for e in result.entries
    ]
    rows = [["omega", "step", "diverged", "terminal_energy", "tail_mean_energy", "fitted_floor"]]
    for e in result.entries:
        rows.append(
            [
                repr(e.omega),
                repr(e.step),
                str(e.diverged).lower(),
                repr(e.terminal_energy),
                repr(e.tail_mean_energy),
                repr(e.fitted_floor),
            ]
        )
    write_text_atomic(out_dir / f"{scenario.name}-sweep.csv", csv_text(rows))
    write_text_atomic(out_dir / f"{scenario.name}-sweep.json", json.dumps(report, indent=2))
    for e in result.entries:
        status = "diverged" if e.diverged else f"tail mean E = {e.tail_mean_energy:.6g}"
        print(f"omega = {e.omega:g}: {status}")
    if result.slope is not None:
        print(f"log-log residual slope: {result.slope:.4f}")
    return EXIT_OK


def cmd_verify(scenario: Scenario, out_dir: Path | None) -> int:
    results = verification.run_all_checks(scenario)
    report = report_skeleton(scenario, "verify")
    report["checks"] = {
        name: tag_tree(name, scenario.config_hash, res) for name, res in results.items()
    }
    all_passed = all(res["passed"] for res in results.values())
    report["passed"] = all_passed
    for name, res in results.items():
        print(f"{'PASS' if res['passed'] else 'FAIL'}  {name}")
    if out_dir is not None:
        write_text_atomic(out_dir / f"{scenario.name}-verify.json", json.dumps(report, indent=2))
    else:
        print(json.dumps(report, indent=2))
    return EXIT_OK if all_passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formation-lab",
        description=(
            "Distance-based formation shape control for double-integrator agents: "
            "simulation, frequency sweeps, and numerical stability checks."
        ),
        epilog=f"builtin scenarios: {', '.join(sorted(builtin_scenarios()))}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_seed=True):
        p.add_argument(
            "--scenario",
            required=True,
            help="builtin scenario name or path to a scenario JSON file",
        )
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if with_seed:
            p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    add_common(sub.add_parser("rigidity", help="rank-test the scenario framework"), with_seed=False)
    add_common(sub.add_parser("simulate", help="integrate the scenario and export CSV traces"))
    sweep_p = sub.add_parser("sweep", help="frequency-scale ladder of the dithered loop")
    add_common(sweep_p)
    sweep_p.add_argument(
        "--omega-list",
        type=float,
        nargs="+",
        default=[10.0, 40.0, 160.0, 640.0],
        help="strictly increasing frequency scales",
    )
    add_common(sub.add_parser("verify", help="run the full invariant suite"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if getattr(args, "seed", None) is not None:
            scenario = scenario.with_seed(args.seed)
    except (ScenarioValidationError, json.JSONDecodeError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "rigidity":
            return cmd_rigidity(scenario, args.out)
        if args.command == "simulate":
            return cmd_simulate(scenario, args.out)
        if args.command == "sweep":
            return cmd_sweep(scenario, args.omega_list, args.out)
        if args.command == "verify":
            return cmd_verify(scenario, args.out)
    except UnsupportedFrameworkError as exc:
        print(f"unsupported framework: {exc}", file=sys.stderr)
        return EXIT_INVALID
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
