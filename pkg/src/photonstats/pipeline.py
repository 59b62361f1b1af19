"""End-to-end analysis: simulate, calibrate, reconstruct, witness.

The defining property of the chain is that the efficiency fed into the
reconstruction is estimated from the same conditional click statistics
being inverted, never supplied from outside.  Each stage's numbers land
in one report dictionary; every entry is traceable to a module output.

Stage warnings (inconsistent estimators, negativity, empty heralds,
non-convergence) are collected as strings rather than raised, so a run
always produces a complete report; the CLI decides how strictly to treat
them.
"""

from __future__ import annotations

import datetime
import warnings

import numpy as np

from . import __version__
from .calibration import (
    DEFAULT_SIGMA_THRESHOLD,
    CountHistogram,
    combine_efficiencies,
    consistency_check,
    double_trigger_efficiencies,
    klyshko_efficiency,
    single_trigger_efficiency,
)
from .detector import convolution_matrix
from .distributions import fock, from_probs
from .errors import DomainError, InsufficientDataError
from .heralding import HeraldConfig, TriggerKind
from .inversion import (
    EmOptions,
    deconvolve_clicks,
    direct_invert,
    em_invert,
    fidelity,
)
from .montecarlo import GENERATOR, ExperimentConfig, run
from .nonclassicality import b_std_err, mandel_q_std_err
from .nonclassicality import report as witness_report

SCHEMA_VERSION = "1"


def provenance_block(seed: int | None) -> dict:
    """Provenance carried by every artifact; the timestamp is the only
    field that varies between identical runs.  seed is None for commands
    that consume files instead of running the simulator."""
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "generator": GENERATOR,
        "seed": None if seed is None else int(seed),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def target_photon_number(herald: HeraldConfig) -> int:
    """Photon number the trigger nominally prepares, used as the fidelity
    reference for the reconstruction."""
    if herald.kind is TriggerKind.SINGLE_APD:
        return 1
    if herald.kind is TriggerKind.DOUBLE_APD_COINCIDENCE:
        return 2
    return int(herald.resolve_k)


def calibrate_histogram(
    hist: CountHistogram,
    bins,
    conditional_order: int,
    sigma_threshold: float = DEFAULT_SIGMA_THRESHOLD,
) -> tuple[dict, list[str]]:
    """Efficiency estimates from one conditional click histogram.

    conditional_order is the nominal heralded photon number: 1 selects the
    single-trigger estimator, 2 the three double-trigger estimators; any
    other order falls back to the Klyshko ratio alone.  Click statistics
    are deconvolved to survivor statistics before the order estimators.
    """
    notes: list[str] = []
    p_click = hist.to_click_distribution()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        survivors = deconvolve_clicks(p_click.probs, convolution_matrix(bins, n_max=len(bins)))
    for w in caught:
        notes.append(f"deconvolution: {w.message}")
    total = hist.total
    # the Klyshko ratio is 1 - p(0 clicks | trigger): a cross-check, not a
    # member of the order family, so it stays out of the consistency verdict
    klyshko = klyshko_efficiency(hist)
    if conditional_order == 1:
        primary = single_trigger_efficiency(survivors, total)
        family = [primary]
        eta_source = "single_trigger"
        combined = None
    elif conditional_order == 2:
        triple = double_trigger_efficiencies(survivors, total)
        family = list(triple)
        average, weighted = combine_efficiencies(triple, sigma_threshold)
        primary = weighted
        eta_source = "weighted_average"
        combined = {"average": average.to_dict(), "weighted_average": weighted.to_dict()}
    else:
        primary = klyshko
        family = []
        eta_source = "klyshko"
        combined = None
        notes.append(
            f"no order-{conditional_order} estimator; falling back to the Klyshko ratio"
        )
    estimates = family + [klyshko]
    try:
        consistent, spread = consistency_check(family, sigma_threshold)
    except InsufficientDataError:
        consistent, spread = None, None
    if consistent is False:
        notes.append(
            f"efficiency estimates inconsistent at {sigma_threshold} sigma "
            f"(spread {spread:.4f})"
        )
    eta = float(primary.eta_hat)
    if not np.isfinite(eta) or eta <= 0.0:
        notes.append("calibrated efficiency undefined; reconstruction cannot proceed")
        eta = float("nan")
    elif eta > 1.0:
        notes.append(f"calibrated efficiency {eta:.4f} clipped to 1")
        eta = 1.0
    section = {
        "trigger_label": hist.trigger_label,
        "estimates": [e.to_dict() for e in estimates],
        "consistent": consistent,
        "spread": spread,
        "sigma_threshold": sigma_threshold,
        "combined": combined,
        "eta_for_inversion": None if not np.isfinite(eta) else eta,
        "eta_source": eta_source,
    }
    return section, notes


def invert_histogram(
    hist: CountHistogram,
    eta: float,
    bins,
    method: str = "em",
    options: EmOptions = EmOptions(),
):
    """Reconstruct photon-number statistics from a click histogram."""
    if method == "em":
        c = convolution_matrix(bins, n_max=options.n_max)
        return em_invert(hist, eta, c, options)
    if method == "direct":
        c = convolution_matrix(bins, n_max=len(bins))
        return direct_invert(hist.to_click_distribution(), eta, c)
    raise DomainError(f"unknown inversion method {method!r}; use 'em' or 'direct'")


def witness_tolerance(rho: np.ndarray, total: int) -> float:
    """3-sigma flag threshold from delta-method errors on the witnesses."""
    sigmas = [b_std_err(rho, n, total) for n in range(rho.size - 2)]
    try:
        sigmas.append(mandel_q_std_err(rho, total))
    except DomainError:
        pass
    return 3.0 * max(sigmas) if sigmas else 1e-9


def run_pipeline(
    config: ExperimentConfig,
    threads: int = 1,
    method: str = "em",
    sigma_threshold: float = DEFAULT_SIGMA_THRESHOLD,
    em_options: EmOptions = EmOptions(),
) -> dict:
    """Simulate one dataset and push it through the full analysis chain.

    Returns the report dictionary; identical (config, threads-independent)
    runs differ only in the provenance timestamp.
    """
    output = run(config, threads=threads)
    label = config.herald.trigger_label
    hist = output.histograms[label]
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "provenance": provenance_block(config.seed),
        "config": config.to_dict(),
        "herald_count": output.herald_count,
        "histogram": {
            "trigger_label": label,
            "counts": [int(c) for c in hist.counts],
        },
        "warnings": [],
        "efficiency": None,
        "inversion": None,
        "nonclassicality": None,
    }
    if output.herald_count == 0:
        report["warnings"].append("no heralds recorded; downstream stages skipped")
        return report
    target = target_photon_number(config.herald)
    efficiency, notes = calibrate_histogram(hist, config.bins, target, sigma_threshold)
    report["efficiency"] = efficiency
    report["warnings"].extend(notes)
    eta = efficiency["eta_for_inversion"]
    if eta is None:
        return report
    inv = invert_histogram(hist, eta, config.bins, method, em_options)
    target_dist = fock(target, n_max=inv.rho.size - 1) if target < inv.rho.size else None
    inv_section = inv.to_dict()
    inv_section["target_photon_number"] = target
    inv_section["fidelity_to_target"] = (
        None if target_dist is None else fidelity(inv.rho, target_dist.probs)
    )
    report["inversion"] = inv_section
    if not inv.converged:
        report["warnings"].append("reconstruction stopped at the sweep budget")
    if inv.negativity_flag:
        report["warnings"].append(
            "direct inversion produced negative entries; model assumptions suspect"
        )
    clicks = hist.to_click_distribution()
    rho = np.clip(inv.rho, 0.0, None)
    rho = rho / rho.sum()
    tol = witness_tolerance(rho, output.herald_count)
    witness = witness_report(from_probs(rho), clicks, tol)
    nc_section = {
        "q_detected": witness.q_detected,
        "q_inferred": witness.q_inferred,
        "b_values": [float(x) for x in witness.b_values],
        "q_negative": witness.q_negative,
        "p_negativity_witnessed": witness.p_negativity_witnessed,
        "tol": witness.tol,
        "tol_basis": "3 sigma, delta method on the herald count",
        "detected_mean": float(clicks.mean()),
        "notes": list(witness.notes),
    }
    report["nonclassicality"] = nc_section
    return report
