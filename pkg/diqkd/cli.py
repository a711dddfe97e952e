"""Command-line entry point for the squash, key-rate and protocol analyses."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Sequence
from typing import Any

import numpy as np
import xarray

from diqkd.bounds import (
    ProtocolParams,
    asymptotic_rate,
    chernoff_abort_bound,
    delta_s,
    device_dependent_rate,
    device_dependent_threshold,
    finite_key_length,
    finite_key_rate,
    qber_threshold,
    syndrome_budget,
)
from diqkd.chsh import build_chsh, spectrum_grid
from diqkd.operator_algebra import phase
from diqkd.protocol import (
    EveStrategy,
    label_abort_frequency,
    optimal_chsh_state,
    povm_noise_experiment,
    simulate_runs,
    summarize_runs,
)
from diqkd.squash import nogo_alphas, nogo_scan, theorem2_grid

DEFAULT_SEED = 0
DEFAULT_P_EST = 0.01
DEFAULT_SQUASH_GRID = 64
DEFAULT_NOGO_GRID = 16
DEFAULT_TOL = 1e-9
SPECTRUM_TOL = 1e-10
CSV_FLOAT_FORMAT = ".12g"
EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1


@dataclasses.dataclass
class CommandResult:
    """Tabular rows for CSV, a summary for JSON and the verification verdict."""

    rows: list[dict[str, Any]]
    summary: dict[str, Any]
    passed: bool = True


def _add_common_flags(parser: argparse.ArgumentParser, fmt_default: str) -> None:
    parser.add_argument("--out", default="-", help="Output file; '-' writes to stdout.")
    parser.add_argument(
        "--format",
        choices=["csv", "json"],
        default=fmt_default,
        help="Output format.",
    )
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Master seed.")
    parser.add_argument("--config", help="TOML file with flag defaults; flags override it.")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Python logging level.",
    )
    parser.add_argument(
        "--dask-scheduler",
        help="Dask scheduler address; defaults to DASK_SCHEDULER_ADDRESS, else local execution.",
    )


def _add_param_flags(
    parser: argparse.ArgumentParser,
    p_est_default: float | None = DEFAULT_P_EST,
    p_est_help: str = "QBER used for the default syndrome budget.",
) -> None:
    parser.add_argument("--n", type=int, default=10**6, help="Sifted-key length.")
    parser.add_argument("--q", type=float, default=0.1, help="Sample-label probability.")
    parser.add_argument("--delta", type=float, default=0.01, help="Label-count slack.")
    parser.add_argument("--S0", type=float, default=0.69, help="CHSH threshold.")
    parser.add_argument("--eps", type=float, default=1e-9, help="Security parameter.")
    parser.add_argument("--eps-cor", type=float, default=1e-9, help="Correctness parameter.")
    parser.add_argument("--f-ec", type=float, default=1.0, help="Error-correction efficiency.")
    parser.add_argument(
        "--l-syn",
        type=int,
        help="Syndrome budget in bits; defaults to ceil(f_ec n h(p_est)).",
    )
    parser.add_argument(
        "--p-est",
        type=float,
        default=p_est_default,
        help=p_est_help,
    )


def build_parser(config: dict[str, Any] | None = None) -> argparse.ArgumentParser:
    """Build the command-line parser, with ``config`` values as flag defaults."""
    parser = argparse.ArgumentParser(
        description="Squash verification, key-rate bounds and protocol simulation."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    rate = subparsers.add_parser("rate-curve", help="Asymptotic key rate versus QBER.")
    rate.add_argument("--p-min", type=float, default=0.0)
    rate.add_argument("--p-max", type=float, default=0.15)
    rate.add_argument("--steps", type=int, default=151)
    rate.add_argument("--f-ec", type=float, default=1.0)
    _add_common_flags(rate, "csv")

    keylength = subparsers.add_parser("keylength", help="Finite-size secret-key length.")
    _add_param_flags(keylength)
    _add_common_flags(keylength, "json")

    squash = subparsers.add_parser("verify-squash", help="Check the squash on a grid.")
    squash.add_argument("--grid", type=int, default=DEFAULT_SQUASH_GRID)
    squash.add_argument("--tol", type=float, default=DEFAULT_TOL)
    _add_common_flags(squash, "json")

    nogo = subparsers.add_parser("nogo", help="One-partite squash feasibility scan.")
    nogo.add_argument("--grid", type=int, default=DEFAULT_NOGO_GRID)
    _add_common_flags(nogo, "json")

    spectrum = subparsers.add_parser("chsh-spectrum", help="CHSH spectrum on a grid.")
    spectrum.add_argument("--grid", type=int, default=DEFAULT_SQUASH_GRID)
    spectrum.add_argument("--tol", type=float, default=SPECTRUM_TOL)
    _add_common_flags(spectrum, "json")

    simulate = subparsers.add_parser("simulate", help="Monte Carlo protocol runs.")
    _add_param_flags(
        simulate,
        p_est_default=None,
        p_est_help=(
            "QBER estimate that sizes both the default syndrome budget and the "
            "syndrome each run sends; defaults to --p."
        ),
    )
    simulate.add_argument(
        "--strategy",
        choices=["iid_depolarizing", "constant_misalignment"],
        default="iid_depolarizing",
    )
    simulate.add_argument("--p", type=float, default=0.0, help="Depolarizing QBER.")
    simulate.add_argument("--alpha-angle", type=float, default=1.5 * math.pi)
    simulate.add_argument("--beta-angle", type=float, default=1.5 * math.pi)
    simulate.add_argument("--runs", type=int, default=10)
    simulate.add_argument("--corrupt-bits", type=int, default=0)
    _add_common_flags(simulate, "json")

    check = subparsers.add_parser("bounds-check", help="Monte Carlo checks of tail bounds.")
    _add_param_flags(check)
    check.add_argument("--runs", type=int, default=1000, help="Label-abort trials.")
    check.add_argument("--trials", type=int, default=1000, help="Noise-experiment trials.")
    _add_common_flags(check, "json")

    if config:
        for subparser in subparsers.choices.values():
            # Keys that name no flag of this subcommand are ignored.
            known = {action.dest for action in subparser._actions}
            subparser.set_defaults(**{k: v for k, v in config.items() if k in known})
    return parser


def load_config(path: str) -> dict[str, Any]:
    """Read flag defaults from a flat TOML table; keys use underscores."""
    with open(path, "rb") as handle:
        config = tomllib.load(handle)
    for key, value in config.items():
        if isinstance(value, dict):
            raise ValueError(f"Config key '{key}' must be a scalar, not a table")
    return config


def resolved_p_est(args: argparse.Namespace) -> float:
    """Return --p-est, or the simulated source QBER --p when it is omitted."""
    if args.p_est is not None:
        return args.p_est
    return args.p


def params_from_args(args: argparse.Namespace) -> ProtocolParams:
    """Build ProtocolParams from parameter flags, sizing l_syn from p_est if omitted."""
    l_syn = args.l_syn
    if l_syn is None:
        l_syn = syndrome_budget(args.n, args.f_ec, resolved_p_est(args))
    return ProtocolParams(
        n=args.n,
        q=args.q,
        delta=args.delta,
        S0=args.S0,
        eps=args.eps,
        eps_cor=args.eps_cor,
        l_syn=l_syn,
        f_ec=args.f_ec,
    )


def validate_args(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Validate ranges and cross-field constraints."""
    if args.command == "rate-curve":
        if not 0 <= args.p_min < args.p_max <= 0.15:
            parser.error("--p-min and --p-max must satisfy 0 <= p_min < p_max <= 0.15")
        if args.steps < 2:
            parser.error("--steps must be at least 2")
        if args.f_ec < 1:
            parser.error("--f-ec must be at least 1")
    if args.command in ("verify-squash", "chsh-spectrum") and args.grid < 2:
        parser.error("--grid must be at least 2")
    if args.command == "nogo" and args.grid < 1:
        parser.error("--grid must be positive")
    if getattr(args, "tol", 1.0) <= 0:
        parser.error("--tol must be positive")
    if args.command in ("simulate", "bounds-check") and (
        args.runs < 1 or getattr(args, "trials", 1) < 1
    ):
        parser.error("--runs and --trials must be positive")
    if args.command in ("keylength", "simulate", "bounds-check"):
        try:
            params_from_args(args)
            if args.command == "simulate":
                strategy_from_args(args)
        except ValueError as exc:
            parser.error(str(exc))


def strategy_from_args(args: argparse.Namespace) -> EveStrategy:
    if args.strategy == "constant_misalignment":
        return EveStrategy.constant_misalignment(
            phase(args.alpha_angle), phase(args.beta_angle), args.p
        )
    return EveStrategy.iid_depolarizing(args.p)


def connect_dask(scheduler_address: str | None = None) -> Any | None:
    """Connect to the given Dask scheduler, falling back to DASK_SCHEDULER_ADDRESS."""
    scheduler_address = scheduler_address or os.environ.get("DASK_SCHEDULER_ADDRESS")
    if not scheduler_address:
        logging.info("No Dask scheduler configured; using local Dask execution")
        return None

    from distributed import Client

    logging.info("Connecting to Dask scheduler at %s", scheduler_address)
    return Client(scheduler_address)


def _grid_rows(dataset: xarray.Dataset) -> list[dict[str, Any]]:
    return dataset.to_dataframe().reset_index().to_dict(orient="records")


def run_rate_curve(args: argparse.Namespace) -> CommandResult:
    grid = np.linspace(args.p_min, args.p_max, args.steps)
    rows = [
        {
            "p": float(p),
            "R_ours": asymptotic_rate(float(p), args.f_ec),
            "R_device_dependent": device_dependent_rate(float(p), args.f_ec),
        }
        for p in grid
    ]
    summary = {
        "qber_threshold": qber_threshold(args.f_ec),
        "device_dependent_threshold": device_dependent_threshold(args.f_ec),
        "rows": rows,
    }
    return CommandResult(rows, summary)


def run_keylength(args: argparse.Namespace) -> CommandResult:
    params = params_from_args(args)
    report = finite_key_length(params)
    summary = {
        "params": params.to_dict(),
        "report": report.to_dict(),
        "finite_key_rate": finite_key_rate(params),
    }
    row = {
        "l": report.l,
        "N": params.N,
        "l_smp": params.l_smp,
        "mu_prime": report.mu_prime,
        "delta_s": report.delta_s,
        "mu": report.mu,
        "hmin_bound": report.hmin_bound,
    }
    return CommandResult([row], summary)


def run_verify_squash(args: argparse.Namespace) -> CommandResult:
    dataset = theorem2_grid(args.grid, args.tol)
    passed = bool(dataset["passed"].all())
    summary = {
        "cells": int(dataset["passed"].size),
        "passed_cells": int(dataset["passed"].sum()),
        "worst_cond1_residual": float(dataset["cond1_residual"].max()),
        "worst_cond2_min_eig": float(dataset["cond2_min_eig"].min()),
        "worst_n_min_eig": float(dataset["n_min_eig"].min()),
        "worst_mprime_gap": float(dataset["mprime_gap"].min()),
        "cells_detail": _grid_rows(dataset),
    }
    return CommandResult(_grid_rows(dataset), summary, passed)


def run_nogo(args: argparse.Namespace) -> CommandResult:
    alphas = nogo_alphas(args.grid)
    reports = nogo_scan(alphas)
    rows = []
    passed = True
    for alpha, report in zip(alphas, reports):
        expected = "feasible" if abs(abs(alpha.imag) - 1) < 1e-12 else "infeasible"
        passed &= report.status == expected
        rows.append(
            {
                "alpha_angle": float(np.angle(alpha) % (2 * np.pi)),
                "status": report.status,
                "expected": expected,
                "residual": report.residual,
                "gap": report.gap,
                "iterations": report.iterations,
            }
        )
    summary = {
        "inconclusive": [row["alpha_angle"] for row in rows if row["status"] == "inconclusive"],
        "cells": rows,
    }
    return CommandResult(rows, summary, passed)


def run_chsh_spectrum(args: argparse.Namespace) -> CommandResult:
    dataset = spectrum_grid(args.grid)
    checks = {
        "max_normalization_error": float(dataset["normalization_error"].max()),
        "max_reconstruction_error": float(dataset["reconstruction_error"].max()),
        "max_abs_eigenvalue": float(dataset["max_abs_eigenvalue"].max()),
        "min_mprime_gap": float(dataset["mprime_gap"].min()),
    }
    passed = (
        checks["max_normalization_error"] <= 1e-12
        and checks["max_reconstruction_error"] <= args.tol
        and checks["max_abs_eigenvalue"] <= 1 / math.sqrt(2) + 1e-12
        and checks["min_mprime_gap"] >= -args.tol
    )
    return CommandResult(_grid_rows(dataset), {**checks, "cells": _grid_rows(dataset)}, passed)


def run_simulate(args: argparse.Namespace) -> CommandResult:
    params = params_from_args(args)
    transcripts = simulate_runs(
        params,
        strategy_from_args(args),
        args.runs,
        seed=args.seed,
        p_est=resolved_p_est(args),
        corrupt_bits=args.corrupt_bits,
    )
    rows = [
        {
            "run": k,
            "abort": t.abort or "",
            "s_est": t.s_est,
            "sifted_qber": t.sifted_qber,
            "syndrome_bits": t.syndrome_bits,
            "key_length": t.key_length,
        }
        for k, t in enumerate(transcripts)
    ]
    summary = {"params": params.to_dict(), **summarize_runs(transcripts), "run_details": rows}
    return CommandResult(rows, summary)


def run_bounds_check(args: argparse.Namespace) -> CommandResult:
    params = params_from_args(args)
    rng = np.random.default_rng(args.seed)
    chernoff = chernoff_abort_bound(params)
    frequency = label_abort_frequency(params, args.runs, rng)
    chernoff_slack = 3 * math.sqrt(chernoff["corrected"] * (1 - chernoff["corrected"]) / args.runs)

    m = build_chsh(-1j, -1j)
    deviation = delta_s(params.l_smp, params.eps / 3)
    noise = povm_noise_experiment(
        m, optimal_chsh_state(m), args.trials, rng, params.l_smp, deviation
    )
    azuma_slack = 3 * math.sqrt(noise["azuma_tail"] * (1 - noise["azuma_tail"]) / args.trials)

    rows = [
        {
            "check": "label_abort",
            "empirical": frequency,
            "bound": chernoff["corrected"],
            "printed_bound": chernoff["printed"],
        },
        {
            "check": "chsh_noise_tail",
            "empirical": noise["empirical_tail"],
            "bound": noise["azuma_tail"],
            "printed_bound": noise["azuma_tail"],
        },
    ]
    passed = (
        frequency <= chernoff["corrected"] + chernoff_slack
        and noise["empirical_tail"] <= noise["azuma_tail"] + azuma_slack
    )
    summary = {
        "params": params.to_dict(),
        "chernoff": {**chernoff, "empirical": frequency, "trials": args.runs},
        "azuma": noise,
    }
    return CommandResult(rows, summary, passed)


COMMANDS = {
    "rate-curve": run_rate_curve,
    "keylength": run_keylength,
    "verify-squash": run_verify_squash,
    "nogo": run_nogo,
    "chsh-spectrum": run_chsh_spectrum,
    "simulate": run_simulate,
    "bounds-check": run_bounds_check,
}


def resolved_config(args: argparse.Namespace) -> dict[str, Any]:
    """Return the resolved flags echoed into every output header."""
    skip = {"out", "format", "config", "log_level", "dask_scheduler"}
    return {key: value for key, value in sorted(vars(args).items()) if key not in skip}


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), CSV_FLOAT_FORMAT)
    return str(value)


def render_output(result: CommandResult, config: dict[str, Any], fmt: str) -> str:
    """Render a command result as CSV (config header line plus rows) or JSON."""
    if fmt == "json":
        payload = {"config": config, "result": {**result.summary, "passed": result.passed}}
        return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"

    buffer = io.StringIO()
    buffer.write(
        "# config: " + json.dumps(config, sort_keys=True, default=_json_default) + "\n"
    )
    if result.rows:
        writer = csv.DictWriter(buffer, fieldnames=list(result.rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in result.rows:
            writer.writerow({key: _format_cell(value) for key, value in row.items()})
    return buffer.getvalue()


def write_output(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def run_from_args(args: argparse.Namespace) -> CommandResult:
    """Run one subcommand from parsed CLI arguments and write its output."""
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(message)s",
    )
    config = resolved_config(args)
    logging.info("Running %s with %s", args.command, config)

    client = connect_dask(args.dask_scheduler)
    try:
        result = COMMANDS[args.command](args)
    finally:
        if client is not None:
            client.close()

    write_output(render_output(result, config, args.format), args.out)
    logging.info("Wrote %s output to %s", args.format, args.out)
    return result


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = load_config(args.config)
        except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        parser = build_parser(config)
        args = parser.parse_args(argv)
    validate_args(args, parser)
    result = run_from_args(args)
    return EXIT_OK if result.passed else EXIT_VERIFICATION_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
