"""Linear detector model: binomial loss and binary-bin convolution.

A photon-number distribution rho(n) measured through a lossy channel of
efficiency eta and a bank of N binary (click / no-click) detector bins is
mapped to a click-number distribution by

    p_click = C @ L(eta) @ rho

where L(eta) is binomial thinning and C collects the combinatorics of n
ideal photons landing in N bins of which exactly k become occupied.  Both
matrices are column-stochastic, so the forward model preserves
normalization.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .distributions import PhotonDistribution, DEFAULT_N_MAX, from_probs
from .errors import ComplexityError, DomainError, ShapeError

# Exact subset enumeration is exponential in the bin count; above this many
# non-uniform bins we refuse rather than silently crawl.
MAX_EXACT_BINS = 16

BIN_PROB_TOL = 1e-9
CSV_HEADER_CLICKS = ("clicks", "count")


def _comb_table(n_max: int) -> np.ndarray:
    """Binomial coefficients C(n, m) as floats, exact integer arithmetic."""
    table = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for m in range(n + 1):
            table[n, m] = float(math.comb(n, m))
    return table


def _thinning_matrix(eta: float, n_max: int) -> np.ndarray:
    """Binomial thinning matrix entry(m, n) = C(n, m) eta^m (1-eta)^(n-m).

    No range check on eta: the same algebra evaluated at 1/eta yields the
    analytic inverse of the physical loss map.
    """
    comb = _comb_table(n_max)
    m_idx = np.arange(n_max + 1)
    out = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        m = m_idx[: n + 1]
        out[: n + 1, n] = comb[n, : n + 1] * eta**m * (1.0 - eta) ** (n - m)
    return out


@dataclass(frozen=True)
class LossMatrix:
    """Column-stochastic binomial-thinning matrix for channel efficiency eta."""

    matrix: np.ndarray
    eta: float

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def n_max(self) -> int:
        return self.matrix.shape[1] - 1

    def to_json(self) -> str:
        return json.dumps(
            {"kind": "loss_matrix", "eta": self.eta, "matrix": self.matrix.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "LossMatrix":
        data = json.loads(text)
        return cls(np.asarray(data["matrix"], dtype=float), float(data["eta"]))

    def to_csv(self, path) -> None:
        _matrix_to_csv(self.matrix, path)


@dataclass(frozen=True)
class ConvolutionMatrix:
    """Maps n surviving photons to the number k of occupied binary bins."""

    matrix: np.ndarray
    bin_probs: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.bin_probs.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return self.bin_probs.size

    @property
    def n_max(self) -> int:
        return self.matrix.shape[1] - 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "convolution_matrix",
                "bin_probs": self.bin_probs.tolist(),
                "matrix": self.matrix.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ConvolutionMatrix":
        data = json.loads(text)
        return cls(
            np.asarray(data["matrix"], dtype=float),
            np.asarray(data["bin_probs"], dtype=float),
        )

    def to_csv(self, path) -> None:
        _matrix_to_csv(self.matrix, path)


@dataclass(frozen=True)
class TransferMatrix:
    """Composite click response C @ L(eta) of the full detection chain."""

    matrix: np.ndarray
    eta: float
    bin_probs: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.bin_probs.setflags(write=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "transfer_matrix",
                "eta": self.eta,
                "bin_probs": self.bin_probs.tolist(),
                "matrix": self.matrix.tolist(),
            }
        )


@dataclass(frozen=True)
class ClickDistribution:
    """Distribution of the occupied-bin count k = 0 .. n_bins.

    total_counts is None for analytic distributions and carries the sample
    size when the probabilities are empirical frequencies.
    """

    probs: np.ndarray
    total_counts: int | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ShapeError("click probabilities must be a nonempty 1-D vector")
        if np.min(probs) < -BIN_PROB_TOL:
            raise DomainError(f"negative click probability {np.min(probs):.3e}")
        total = probs.sum()
        if abs(total - 1.0) > BIN_PROB_TOL:
            raise DomainError(f"click probabilities sum to {total!r}, not 1")
        probs = np.clip(probs, 0.0, None) / np.clip(probs, 0.0, None).sum()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_bins(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def variance(self) -> float:
        k = np.arange(self.probs.size)
        m = float(k @ self.probs)
        return float((k - m) ** 2 @ self.probs)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "click_distribution",
                "probs": [float(p) for p in self.probs],
                "total_counts": self.total_counts,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ClickDistribution":
        data = json.loads(text)
        total = data.get("total_counts")
        return cls(
            np.asarray(data["probs"], dtype=float),
            None if total is None else int(total),
        )


def _matrix_to_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(x)) for x in row])


def uniform_bins(n_bins: int = 8) -> np.ndarray:
    """Equal splitting probabilities for n_bins time-multiplexed bins."""
    if n_bins < 1:
        raise DomainError(f"need at least one bin, got {n_bins}")
    return np.full(n_bins, 1.0 / n_bins)


def _validate_bin_probs(bin_probs) -> np.ndarray:
    probs = np.asarray(bin_probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ShapeError("bin probabilities must be a nonempty 1-D vector")
    if np.min(probs) < 0:
        raise DomainError(f"negative bin probability {np.min(probs):.3e}")
    total = probs.sum()
    if abs(total - 1.0) > BIN_PROB_TOL:
        raise DomainError(f"bin probabilities sum to {total!r}, not 1")
    return probs / total


def loss_matrix(eta: float, n_max: int = DEFAULT_N_MAX) -> LossMatrix:
    """Binomial loss matrix for a channel that transmits each photon with
    probability eta independently."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"efficiency must lie in [0, 1], got {eta}")
    return LossMatrix(_thinning_matrix(eta, n_max), eta)


def apply_loss(p: PhotonDistribution, eta: float) -> PhotonDistribution:
    """Push a photon-number distribution through a lossy channel."""
    lm = loss_matrix(eta, p.n_max)
    return from_probs(lm.matrix @ p.probs, p.tail_mass)


def _uniform_convolution(n_bins: int, n_max: int) -> np.ndarray:
    # Closed form: inclusion-exclusion over which of the k occupied bins
    # actually receive photons, all bins equally likely.
    out = np.zeros((n_bins + 1, n_max + 1))
    for k in range(n_bins + 1):
        choose_bins = math.comb(n_bins, k)
        for n in range(n_max + 1):
            terms = [
                (-1.0) ** j * math.comb(k, j) * ((k - j) / n_bins) ** n
                for j in range(k + 1)
            ]
            out[k, n] = choose_bins * math.fsum(terms)
    return out


def _general_convolution(bin_probs: np.ndarray, n_max: int) -> np.ndarray:
    # Subset inclusion-exclusion: P(occupied set = T) expands over S <= T,
    # and every subset S contributes to C(N-|S|, k-|S|) supersets of size k.
    n_bins = bin_probs.size
    if n_bins > MAX_EXACT_BINS:
        raise ComplexityError(
            f"exact enumeration over 2^{n_bins} subsets refused; "
            f"at most {MAX_EXACT_BINS} non-uniform bins are supported"
        )
    n_pow = np.arange(n_max + 1)
    out = np.zeros((n_bins + 1, n_max + 1))
    for subset in range(1 << n_bins):
        size = subset.bit_count()
        q = bin_probs[[i for i in range(n_bins) if subset >> i & 1]].sum()
        powers = q**n_pow  # 0**0 == 1 covers the empty subset at n = 0
        for k in range(size, n_bins + 1):
            coeff = (-1.0) ** (k - size) * math.comb(n_bins - size, k - size)
            out[k] += coeff * powers
    return out


def convolution_matrix(bin_probs, n_max: int = DEFAULT_N_MAX) -> ConvolutionMatrix:
    """Occupied-bin-count response of a bank of binary detector bins.

    entry(k, n) is the probability that n photons, each independently routed
    to bin i with probability bin_probs[i], occupy exactly k distinct bins.

    Args:
        bin_probs: Routing probabilities of the bins; must sum to 1.  Equal
            entries trigger a fast closed form with no size limit; unequal
            entries use exact subset enumeration, limited to 16 bins.
        n_max: Largest photon number (column index) represented.
    """
    probs = _validate_bin_probs(bin_probs)
    if np.all(probs == probs[0]):
        matrix = _uniform_convolution(probs.size, n_max)
    else:
        matrix = _general_convolution(probs, n_max)
    return ConvolutionMatrix(matrix, probs)


def compose(c: ConvolutionMatrix, l: LossMatrix) -> TransferMatrix:
    """Combine bin convolution and loss into one click-response matrix."""
    if c.matrix.shape[1] != l.matrix.shape[0]:
        raise ShapeError(
            f"cannot compose: {c.matrix.shape} against {l.matrix.shape}"
        )
    return TransferMatrix(c.matrix @ l.matrix, l.eta, c.bin_probs)


def forward_model(p: PhotonDistribution, eta: float, bin_probs) -> ClickDistribution:
    """Predict click statistics for a source distribution seen through loss
    eta and a bank of binary bins."""
    probs = _validate_bin_probs(bin_probs)
    lm = loss_matrix(eta, p.n_max)
    cm = convolution_matrix(probs, p.n_max)
    return ClickDistribution(cm.matrix @ (lm.matrix @ p.probs))
