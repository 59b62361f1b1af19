"""Seeded Monte Carlo of the heralded-source measurement chain.

Simulates, pulse by pulse, what the analytic modules describe in closed
form: photon pairs from a parametric source, a trigger detector on one
arm (with loss and dark clicks), optional contaminant light entering the
signal arm, signal-arm transmission, and multinomial assignment of the
surviving photons to binary detector bins.  Serves as the independent
oracle for the analytic forward model and as the generator of synthetic
datasets at experimental scale.

Reproducibility contract: pulses are processed in fixed-size chunks and
chunk i always draws from substream i of a counter-based Philox generator
keyed by the seed, so output is bit-identical for a given (config, seed)
no matter how many worker threads share the chunks.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .calibration import CountHistogram
from .detector import _validate_bin_probs, uniform_bins
from .errors import DomainError
from .heralding import HeraldConfig, TriggerKind

GENERATOR = "philox4x64"
CHUNK_PULSES = 1 << 20
# keep counts exactly representable and memory sane
MAX_PULSES = 1 << 53

CONTAMINANT_KINDS = ("coherent", "thermal")


@dataclass(frozen=True)
class Contaminant:
    """Uncorrelated background light mixed into the signal arm before loss."""

    kind: str
    mean: float

    def __post_init__(self):
        if self.kind not in CONTAMINANT_KINDS:
            raise DomainError(
                f"contaminant kind must be one of {CONTAMINANT_KINDS}, got {self.kind!r}"
            )
        if not 0.0 <= self.mean < float("inf"):
            raise DomainError(f"contaminant mean must be finite and nonnegative, got {self.mean}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean}

    @classmethod
    def from_dict(cls, data: dict) -> "Contaminant":
        return cls(kind=data["kind"], mean=data["mean"])


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one simulated run of the experiment."""

    parametric_gain: float
    herald: HeraldConfig
    eta_signal: float
    extra_transmission: float = 1.0
    bins: np.ndarray = None
    contaminant: Contaminant | None = None
    pulses: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.parametric_gain < 1.0:
            raise DomainError(
                f"parametric gain must lie in [0, 1), got {self.parametric_gain}"
            )
        if not isinstance(self.herald, HeraldConfig):
            raise DomainError("herald must be a HeraldConfig")
        if not 0.0 <= self.eta_signal <= 1.0:
            raise DomainError(f"signal efficiency must lie in [0, 1], got {self.eta_signal}")
        if not 0.0 < self.extra_transmission <= 1.0:
            raise DomainError(
                f"extra transmission must lie in (0, 1], got {self.extra_transmission}"
            )
        bins = _validate_bin_probs(uniform_bins(8) if self.bins is None else self.bins)
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)
        if self.contaminant is not None and not isinstance(self.contaminant, Contaminant):
            raise DomainError("contaminant must be a Contaminant or None")
        if not isinstance(self.pulses, (int, np.integer)) or isinstance(self.pulses, bool):
            raise DomainError(f"pulses must be an integer, got {self.pulses!r}")
        if not 1 <= self.pulses <= MAX_PULSES:
            raise DomainError(f"pulses must lie in [1, {MAX_PULSES}], got {self.pulses}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise DomainError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "parametric_gain": self.parametric_gain,
            "herald": self.herald.to_dict(),
            "eta_signal": self.eta_signal,
            "extra_transmission": self.extra_transmission,
            "bins": [float(x) for x in self.bins],
            "contaminant": None if self.contaminant is None else self.contaminant.to_dict(),
            "pulses": int(self.pulses),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        contaminant = data.get("contaminant")
        return cls(
            parametric_gain=data["parametric_gain"],
            herald=HeraldConfig.from_dict(data["herald"]),
            eta_signal=data["eta_signal"],
            extra_transmission=data.get("extra_transmission", 1.0),
            bins=data.get("bins"),
            contaminant=None if contaminant is None else Contaminant.from_dict(contaminant),
            pulses=data.get("pulses", 1_000_000),
            seed=data.get("seed", 0),
        )


@dataclass(frozen=True)
class SimulationOutput:
    """Histograms and bookkeeping from one simulated run."""

    histograms: dict[str, CountHistogram]
    herald_count: int
    pulses_run: int
    seed: int
    config_echo: ExperimentConfig
    generator: str = GENERATOR

    def to_json(self) -> str:
        return json.dumps(
            {
                "histograms": {
                    label: [int(x) for x in hist.counts]
                    for label, hist in self.histograms.items()
                },
                "herald_count": self.herald_count,
                "pulses_run": self.pulses_run,
                "seed": self.seed,
                "generator": self.generator,
                "config": self.config_echo.to_dict(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SimulationOutput":
        raw = json.loads(text)
        return cls(
            histograms={
                label: CountHistogram(np.asarray(counts), trigger_label=label)
                for label, counts in raw["histograms"].items()
            },
            herald_count=raw["herald_count"],
            pulses_run=raw["pulses_run"],
            seed=raw["seed"],
            config_echo=ExperimentConfig.from_dict(raw["config"]),
            generator=raw["generator"],
        )


def _pair_numbers(rng, q: float, size: int) -> np.ndarray:
    if q == 0.0:
        return np.zeros(size, dtype=np.int64)
    return rng.geometric(1.0 - q, size) - 1


def _trigger_outcomes(rng, n: np.ndarray, herald: HeraldConfig) -> np.ndarray:
    dark = herald.dark_click_prob
    if herald.kind is TriggerKind.SINGLE_APD:
        det = rng.binomial(n, herald.eta_trigger) > 0
        if dark > 0:
            det |= rng.random(n.size) < dark
        return det
    if herald.kind is TriggerKind.DOUBLE_APD_COINCIDENCE:
        # per photon: reach APD a or b with probability eta/2 each
        half = herald.eta_trigger / 2.0
        a = rng.binomial(n, half)
        b = rng.binomial(n - a, half / (1.0 - half))
        click_a = a > 0
        click_b = b > 0
        if dark > 0:
            click_a |= rng.random(n.size) < dark
            click_b |= rng.random(n.size) < dark
        return click_a & click_b
    return n == herald.resolve_k


def _signal_clicks(rng, photons: np.ndarray, transmission: float, bins: np.ndarray) -> np.ndarray:
    """Occupied-bin count for each heralded pulse."""
    survivors = (
        rng.binomial(photons, transmission)
        if transmission > 0
        else np.zeros(photons.size, dtype=np.int64)
    )
    clicks = np.zeros(photons.size, dtype=np.int64)
    total = int(survivors.sum())
    if total == 0:
        return clicks
    rows = np.repeat(np.arange(photons.size), survivors)
    edges = np.cumsum(bins)
    cols = np.searchsorted(edges, rng.random(total), side="right")
    occupied = np.zeros((photons.size, bins.size), dtype=bool)
    occupied[rows, np.minimum(cols, bins.size - 1)] = True
    return occupied.sum(axis=1)


def _run_chunk(config: ExperimentConfig, chunk_index: int, size: int) -> tuple[np.ndarray, int]:
    rng = np.random.Generator(np.random.Philox(key=config.seed).jumped(chunk_index))
    n = _pair_numbers(rng, config.parametric_gain**2, size)
    heralded = np.flatnonzero(_trigger_outcomes(rng, n, config.herald))
    n_bins = config.bins.size
    if heralded.size == 0:
        return np.zeros(n_bins + 1, dtype=np.int64), 0
    photons = n[heralded]
    if config.contaminant is not None and config.contaminant.mean > 0:
        mean = config.contaminant.mean
        if config.contaminant.kind == "coherent":
            photons = photons + rng.poisson(mean, heralded.size)
        else:
            photons = photons + rng.geometric(1.0 / (1.0 + mean), heralded.size) - 1
    clicks = _signal_clicks(
        rng, photons, config.eta_signal * config.extra_transmission, config.bins
    )
    return np.bincount(clicks, minlength=n_bins + 1), int(heralded.size)


def run(config: ExperimentConfig, threads: int = 1) -> SimulationOutput:
    """Simulate config.pulses pulses and histogram the heralded clicks.

    threads > 1 splits the fixed chunk grid over a thread pool; the chunk
    substream discipline keeps the result identical to a serial run.
    """
    if threads < 1:
        raise DomainError(f"threads must be at least 1, got {threads}")
    n_chunks = -(-config.pulses // CHUNK_PULSES)
    sizes = [
        min(CHUNK_PULSES, config.pulses - i * CHUNK_PULSES) for i in range(n_chunks)
    ]
    if threads == 1:
        parts = [_run_chunk(config, i, size) for i, size in enumerate(sizes)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [config] * n_chunks, range(n_chunks), sizes))
    counts = np.sum([c for c, _ in parts], axis=0, dtype=np.int64)
    herald_count = sum(h for _, h in parts)
    label = config.herald.trigger_label
    return SimulationOutput(
        histograms={label: CountHistogram(counts, trigger_label=label)},
        herald_count=herald_count,
        pulses_run=config.pulses,
        seed=config.seed,
        config_echo=config,
    )


def replay(seed: int, config: ExperimentConfig, threads: int = 1) -> SimulationOutput:
    """Re-run a configuration under a specific seed."""
    return run(replace(config, seed=seed), threads=threads)
