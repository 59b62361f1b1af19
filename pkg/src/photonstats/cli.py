"""Command-line front end.

Commands
    simulate    run the seeded simulator, write click histograms
    calibrate   efficiency estimates from a histogram CSV
    invert      reconstruct photon-number statistics from a histogram
    analyze     nonclassicality witnesses on reconstructed statistics
    pipeline    simulate, calibrate, invert, analyze in one pass

Exit codes: 0 on success; 1 when --strict escalates recorded warnings
(inconsistent estimators, negativity, empty heralds); 2 for usage,
configuration, and domain errors.

Environment: PHOTONSTATS_OUT_DIR sets the default output directory,
PHOTONSTATS_LOG_LEVEL the logging level.  Nothing else is read from the
environment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .calibration import DEFAULT_SIGMA_THRESHOLD, CountHistogram
from .detector import convolution_matrix, loss_matrix, uniform_bins
from .distributions import coherent, from_probs
from .errors import ConditioningError
from .inversion import EmOptions, rho_from_csv
from .montecarlo import ExperimentConfig, run
from .nonclassicality import DEFAULT_TOL
from .nonclassicality import report as witness_report
from .pipeline import (
    SCHEMA_VERSION,
    calibrate_histogram,
    invert_histogram,
    provenance_block,
    run_pipeline,
    witness_tolerance,
)

ENV_OUT_DIR = "PHOTONSTATS_OUT_DIR"
ENV_LOG_LEVEL = "PHOTONSTATS_LOG_LEVEL"

CONFIG_SCHEMA_FILE = "experiment_config.schema.json"


class UsageError(Exception):
    """Bad invocation or input; maps to exit code 2."""


def _schema() -> dict:
    text = (
        resources.files("photonstats.schemas").joinpath(CONFIG_SCHEMA_FILE).read_text()
    )
    return json.loads(text)


def config_schema_errors(doc) -> list[str]:
    """Validate a config document; one 'pointer: message' line per violation."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: str(list(e.absolute_path)))
    lines = []
    for err in errors:
        pointer = "/" + "/".join(str(part) for part in err.absolute_path)
        lines.append(f"{pointer}: {err.message}")
    return lines


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path) as fh:
        doc = json.load(fh)
    problems = config_schema_errors(doc)
    if problems:
        raise UsageError(
            f"config {path} fails schema validation:\n  " + "\n  ".join(problems)
        )
    config = ExperimentConfig.from_dict(doc)
    if seed_override is not None:
        config = dataclasses.replace(config, seed=seed_override)
    return config


def resolve_out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def parse_bins(text: str) -> np.ndarray:
    """--bins accepts a bin count ('8') or routing probabilities ('0.5,0.3,0.2')."""
    if "," not in text:
        return uniform_bins(int(text))
    return np.array([float(x) for x in text.split(",")])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows, seed: int | None) -> None:
    """All CSV artifacts carry a one-line provenance comment.  No timestamp,
    so identical runs produce identical bytes."""
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# photonstats {__version__} schema={SCHEMA_VERSION} seed={seed}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def overlay_rows(rho: np.ndarray, eta: float, bins: np.ndarray, clicks: np.ndarray):
    """Observed click frequencies next to the click curve a Poissonian
    source of the same mean photon number would produce through the same
    loss and binning."""
    mean = float(np.arange(rho.size) @ rho)
    # max_tail=1: the reference is a plot guide, folding is acceptable
    reference_source = coherent(mean, n_max=max(rho.size - 1, 2 * bins.size), max_tail=1.0)
    chain = convolution_matrix(bins, n_max=reference_source.n_max).matrix @ (
        loss_matrix(eta, reference_source.n_max).matrix
    )
    reference = chain @ reference_source.probs
    rows = []
    for k in range(bins.size + 1):
        observed = float(clicks[k]) if k < clicks.size else 0.0
        rows.append([k, repr(observed), repr(float(reference[k]))])
    return rows


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.seed)
    out = resolve_out_dir(args)
    output = run(config, threads=args.threads)
    for label in sorted(output.histograms):
        hist = output.histograms[label]
        write_csv(
            out / f"histogram_{label}.csv",
            ("clicks", "count"),
            [(k, int(c)) for k, c in enumerate(hist.counts)],
            config.seed,
        )
        write_json(
            out / f"histogram_{label}.json",
            {
                "provenance": provenance_block(config.seed),
                "histogram": json.loads(hist.to_json()),
            },
        )
    write_json(
        out / "simulation.json",
        {
            "provenance": provenance_block(config.seed),
            "config": config.to_dict(),
            "herald_count": output.herald_count,
            "pulses_run": output.pulses_run,
        },
    )
    print(
        f"simulated {output.pulses_run} pulses, {output.herald_count} heralds "
        f"-> {out}"
    )
    return 0


def cmd_calibrate(args) -> int:
    hist = CountHistogram.from_csv(args.histogram, trigger_label=args.trigger)
    order = int(args.trigger[1:]) if args.trigger[1:].isdigit() else 1
    bins = parse_bins(args.bins)
    section, notes = calibrate_histogram(hist, bins, order, args.sigma_threshold)
    out = resolve_out_dir(args)
    write_json(
        out / "calibration.json",
        {
            "provenance": provenance_block(None),
            "efficiency": section,
            "warnings": notes,
        },
    )
    eta = section["eta_for_inversion"]
    verdict = "consistent" if section["consistent"] else "INCONSISTENT"
    if section["consistent"] is None:
        verdict = "single estimator"
    print(f"eta = {eta if eta is not None else 'undefined'} ({verdict}) -> {out}")
    if args.strict and (section["consistent"] is False or eta is None):
        return 1
    return 0


def cmd_invert(args) -> int:
    hist = CountHistogram.from_csv(args.histogram)
    bins = parse_bins(args.bins)
    options = EmOptions(tol=args.tol, max_iter=args.max_iter, n_max=args.n_max)
    try:
        result = invert_histogram(hist, args.eta, bins, args.method, options)
    except ConditioningError as err:
        raise UsageError(
            f"{err} (coarser binning or the EM method avoid the solve)"
        ) from err
    out = resolve_out_dir(args)
    write_csv(
        out / "rho.csv",
        ("n", "rho"),
        [(n, repr(float(x))) for n, x in enumerate(result.rho)],
        None,
    )
    write_json(
        out / "inversion.json",
        {"provenance": provenance_block(None), "inversion": result.to_dict()},
    )
    write_json(
        out / "likelihood_trace.json",
        {
            "provenance": provenance_block(None),
            "log_likelihood": [float(x) for x in result.log_likelihood_trace],
        },
    )
    clicks = hist.to_click_distribution().probs
    rho = np.clip(result.rho, 0.0, None)
    write_csv(
        out / "overlay.csv",
        ("clicks", "frequency", "poisson_reference"),
        overlay_rows(rho / rho.sum(), args.eta, bins, clicks),
        None,
    )
    flag = " negativity flagged" if result.negativity_flag else ""
    print(
        f"method={result.method} iterations={result.iterations} "
        f"converged={result.converged}{flag} -> {out}"
    )
    if args.strict and (result.negativity_flag or not result.converged):
        return 1
    return 0


def cmd_analyze(args) -> int:
    rho = rho_from_csv(args.rho)
    clicks = None
    total = None
    if args.histogram:
        hist = CountHistogram.from_csv(args.histogram)
        clicks = hist.to_click_distribution()
        total = hist.total
    if args.tol is not None:
        tol = args.tol
    elif total is not None:
        tol = witness_tolerance(np.clip(rho, 0.0, None), total)
    else:
        tol = DEFAULT_TOL
    rho_clipped = np.clip(rho, 0.0, None)
    witness = witness_report(from_probs(rho_clipped / rho_clipped.sum()), clicks, tol)
    out = resolve_out_dir(args)
    write_json(
        out / "nonclassicality.json",
        {
            "provenance": provenance_block(None),
            "nonclassicality": json.loads(witness.to_json()),
        },
    )
    write_csv(
        out / "b_values.csv",
        ("n", "b"),
        [(n, repr(float(b))) for n, b in enumerate(witness.b_values)],
        None,
    )
    print(
        f"Q_inferred={witness.q_inferred} q_negative={witness.q_negative} "
        f"p_negativity_witnessed={witness.p_negativity_witnessed} -> {out}"
    )
    if args.strict and witness.notes:
        return 1
    return 0


def cmd_pipeline(args) -> int:
    config = load_config(args.config, args.seed)
    options = EmOptions(tol=args.tol, max_iter=args.max_iter, n_max=args.n_max)
    report = run_pipeline(
        config,
        threads=args.threads,
        method=args.method,
        sigma_threshold=args.sigma_threshold,
        em_options=options,
    )
    out = resolve_out_dir(args)
    write_json(out / "report.json", report)
    label = report["histogram"]["trigger_label"]
    counts = np.asarray(report["histogram"]["counts"], dtype=np.int64)
    write_csv(
        out / f"histogram_{label}.csv",
        ("clicks", "count"),
        [(k, int(c)) for k, c in enumerate(counts)],
        config.seed,
    )
    if report["inversion"] is not None:
        rho = np.clip(np.asarray(report["inversion"]["rho"]), 0.0, None)
        rho = rho / rho.sum()
        write_csv(
            out / "rho.csv",
            ("n", "rho"),
            [(n, repr(float(x))) for n, x in enumerate(report["inversion"]["rho"])],
            config.seed,
        )
        clicks = counts / counts.sum()
        write_csv(
            out / "overlay.csv",
            ("clicks", "frequency", "poisson_reference"),
            overlay_rows(rho, report["inversion"]["eta"], config.bins, clicks),
            config.seed,
        )
    if report["nonclassicality"] is not None:
        write_csv(
            out / "b_values.csv",
            ("n", "b"),
            [
                (n, repr(float(b)))
                for n, b in enumerate(report["nonclassicality"]["b_values"])
            ],
            config.seed,
        )
    for line in report["warnings"]:
        print(f"warning: {line}", file=sys.stderr)
    print(f"pipeline report -> {out / 'report.json'}")
    if args.strict and report["warnings"]:
        return 1
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonstats",
        description="Heralded photon statistics: simulation, loss "
        "calibration, reconstruction, nonclassicality witnesses.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeded=False):
        p.add_argument("--out-dir", default=None, help="output directory")
        p.add_argument("--strict", action="store_true", help="warnings exit 1")
        if seeded:
            p.add_argument("--seed", type=int, default=None, help="override config seed")
            p.add_argument("--threads", type=int, default=1, help="simulation threads")

    def em_knobs(p):
        p.add_argument("--method", choices=("em", "direct"), default="em")
        p.add_argument("--n-max", type=int, default=20, help="reconstruction cutoff")
        p.add_argument("--tol", type=float, default=1e-10, help="EM stop tolerance")
        p.add_argument("--max-iter", type=int, default=100_000)

    p = sub.add_parser("simulate", help="run the seeded experiment simulator")
    p.add_argument("--config", required=True, help="experiment config JSON")
    common(p, seeded=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate efficiency from a histogram")
    p.add_argument("--histogram", required=True, help="histogram CSV (clicks,count)")
    p.add_argument("--trigger", default="t1", help="trigger label, e.g. t1 or t2")
    p.add_argument("--bins", default="8", help="bin count or comma probabilities")
    p.add_argument(
        "--sigma-threshold", type=float, default=DEFAULT_SIGMA_THRESHOLD,
        help="consistency threshold in combined standard errors",
    )
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("invert", help="reconstruct photon-number statistics")
    p.add_argument("--histogram", required=True, help="histogram CSV (clicks,count)")
    p.add_argument("--eta", required=True, type=float, help="channel efficiency")
    p.add_argument("--bins", default="8", help="bin count or comma probabilities")
    em_knobs(p)
    common(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("analyze", help="nonclassicality witnesses on statistics")
    p.add_argument("--rho", required=True, help="distribution CSV (n,rho)")
    p.add_argument("--histogram", default=None, help="optional histogram CSV")
    p.add_argument("--tol", type=float, default=None, help="witness flag threshold")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="simulate, calibrate, invert, analyze")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument(
        "--sigma-threshold", type=float, default=DEFAULT_SIGMA_THRESHOLD,
        help="consistency threshold in combined standard errors",
    )
    em_knobs(p)
    common(p, seeded=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    level = os.environ.get(ENV_LOG_LEVEL, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, ConditioningError, OSError) as err:
        print(f"photonstats: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
