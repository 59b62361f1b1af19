"""Unit tests for EM and direct inversion of click statistics."""

import math
from fractions import Fraction

import numpy as np
import pytest

from photonstats import (
    apply_loss,
    coherent,
    convolution_matrix,
    fock,
    forward_model,
    from_probs,
    loss_matrix,
    uniform_bins,
)
from photonstats.calibration import CountHistogram
from photonstats.errors import (
    ConditioningError,
    DomainError,
    QuasiDistributionWarning,
    ShapeError,
)
from photonstats.inversion import (
    EmOptions,
    InversionResult,
    deconvolve_clicks,
    direct_invert,
    em_invert,
    fidelity,
    loss_matrix_inverse,
)


def fsum_matmul(a, b):
    """Matrix product with exactly rounded row sums, for cancellation-heavy
    identity checks."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = math.fsum(a[i, :] * b[:, j])
    return out


@pytest.mark.parametrize("eta", [0.2, 0.373, 0.5, 0.9])
@pytest.mark.parametrize("n_max", [8, 12, 16])
def test_loss_inverse_identity(eta, n_max):
    lm = loss_matrix(eta, n_max).matrix
    linv = loss_matrix_inverse(eta, n_max)
    assert np.allclose(fsum_matmul(linv, lm), np.eye(n_max + 1), atol=1e-10)


@pytest.mark.parametrize("eta", [0.5, 0.75, 0.9])
def test_loss_inverse_identity_full_truncation(eta):
    n_max = 20
    lm = loss_matrix(eta, n_max).matrix
    linv = loss_matrix_inverse(eta, n_max)
    assert np.allclose(fsum_matmul(linv, lm), np.eye(n_max + 1), atol=1e-10)


def _rational_thinning(eta: Fraction, n_max: int):
    """Exact-rational binomial loss matrix, independent of the library code."""
    rows = []
    for m in range(n_max + 1):
        rows.append(
            [
                math.comb(n, m) * eta**m * (1 - eta) ** (n - m) if m <= n else Fraction(0)
                for n in range(n_max + 1)
            ]
        )
    return rows


@pytest.mark.parametrize("eta", [Fraction(1, 5), Fraction(373, 1000)])
def test_loss_inverse_identity_exact_at_low_eta(eta):
    # At eta this small with n_max = 20 the cancelling product terms reach
    # ~1e6 in magnitude, so float64 entry storage alone leaves a residual
    # near 1e-9 in the float product.  The algebraic identity is exact, so
    # the deep-truncation corner is checked in rational arithmetic instead,
    # plus agreement of the float entries with their exact values.
    n_max = 20
    lm = _rational_thinning(eta, n_max)
    linv = _rational_thinning(1 / eta, n_max)
    for i in range(n_max + 1):
        for j in range(n_max + 1):
            dot = sum(linv[i][k] * lm[k][j] for k in range(n_max + 1))
            assert dot == (1 if i == j else 0)
    fl = loss_matrix_inverse(float(eta), n_max)
    for i in range(n_max + 1):
        for j in range(n_max + 1):
            exact = linv[i][j]
            if exact != 0:
                assert abs(Fraction(fl[i, j]) - exact) <= abs(exact) * Fraction(1, 10**12)


def test_loss_inverse_overflow_guard():
    with pytest.raises(DomainError):
        loss_matrix_inverse(0.04, n_max=21)
    # either side of the corner alone is fine
    loss_matrix_inverse(0.04, n_max=20)
    loss_matrix_inverse(0.05, n_max=40)
    with pytest.raises(DomainError):
        loss_matrix_inverse(0.0)


def test_deconvolve_recovers_survivor_statistics():
    c = convolution_matrix(uniform_bins(8), n_max=12)
    survivors = apply_loss(fock(3, n_max=8), 0.7).probs
    clicks = c.matrix[:, :9] @ survivors
    recovered = deconvolve_clicks(clicks, c)
    assert np.allclose(recovered, survivors, atol=1e-10)


def test_deconvolve_warns_on_quasi_output():
    c = convolution_matrix(uniform_bins(4), n_max=6)
    clicks = np.array([0.5, 0.4, 0.06, 0.04, 0.0])
    clicks[2] -= 0.03  # starve two-click events below what one photon allows
    clicks[1] += 0.03
    with pytest.warns(QuasiDistributionWarning):
        result = deconvolve_clicks(clicks, c)
    assert result.min() < -1e-6


def test_direct_invert_single_photon_frozen():
    # paper-style operating point: Bernoulli clicks invert to one photon
    c = convolution_matrix(uniform_bins(8), n_max=8)
    clicks = forward_model(fock(1, n_max=8), 0.373, uniform_bins(8))
    result = direct_invert(clicks, 0.373, c)
    expected = np.zeros(9)
    expected[1] = 1.0
    assert np.allclose(result.rho, expected, atol=1e-10)
    assert not result.negativity_flag
    assert result.method == "direct"


def test_direct_invert_two_photons_exact():
    c = convolution_matrix(uniform_bins(8), n_max=8)
    clicks = forward_model(fock(2, n_max=8), 0.315, uniform_bins(8))
    result = direct_invert(clicks, 0.315, c)
    expected = np.zeros(9)
    expected[2] = 1.0
    assert np.allclose(result.rho, expected, atol=1e-9)


def test_direct_invert_flags_negativity_on_inconsistent_data():
    c = convolution_matrix(uniform_bins(8), n_max=8)
    # double clicks far in excess of what the single-click rate supports:
    # no nonnegative photon distribution reproduces this at eta = 0.373
    clicks = np.zeros(9)
    clicks[0], clicks[1], clicks[2] = 0.55, 0.05, 0.40
    result = direct_invert(clicks, 0.373, c)
    assert result.negativity_flag
    assert result.min_entry < -1e-3


def test_direct_invert_condition_refusal_and_override():
    c = convolution_matrix(uniform_bins(8), n_max=8)
    clicks = forward_model(fock(1, n_max=8), 0.012, uniform_bins(8))
    with pytest.raises(ConditioningError):
        direct_invert(clicks, 0.012, c)
    result = direct_invert(clicks, 0.012, c, allow_ill_conditioned=True)
    assert result.condition_number > 1e12


def test_em_recovers_fock2_noiseless():
    # The maximizer is a simplex vertex, which multiplicative updates only
    # approach at rate ~1/iteration, so this run needs the tol = 0 mode and
    # a large sweep budget (about 45 s).
    c = convolution_matrix(uniform_bins(8), n_max=8)
    clicks = forward_model(fock(2, n_max=8), 0.315, uniform_bins(8))
    result = em_invert(clicks, 0.315, c, EmOptions(n_max=8, tol=0.0, max_iter=5_000_000))
    truth = fock(2, n_max=8).probs
    assert 0.5 * np.abs(result.rho - truth).sum() < 1e-6


@pytest.mark.parametrize("eta", [0.55, 0.7, 0.9])
def test_em_noiseless_recovery_total_variation(eta):
    c = convolution_matrix(uniform_bins(8), n_max=8)
    truth = from_probs([0.01, 0.9, 0.07, 0.02, 0, 0, 0, 0, 0])
    clicks = c.matrix @ apply_loss(truth, eta).probs
    result = em_invert(clicks, eta, c, EmOptions(n_max=8, tol=1e-14))
    assert 0.5 * np.abs(result.rho - truth.probs).sum() < 1e-6


def test_em_log_likelihood_monotone_on_noisy_data():
    rng = np.random.default_rng(42)
    c = convolution_matrix(uniform_bins(8), n_max=20)
    clicks = forward_model(fock(1, n_max=20), 0.373, uniform_bins(8))
    counts = rng.multinomial(100_000, clicks.probs)
    result = em_invert(CountHistogram(counts), 0.373, c)
    trace = np.array(result.log_likelihood_trace)
    assert np.all(np.diff(trace) >= 0)
    assert result.converged


def test_em_fixed_point_when_model_matches_data():
    c = convolution_matrix(uniform_bins(8), n_max=8)
    truth = from_probs([0.05, 0.85, 0.08, 0.02, 0, 0, 0, 0, 0])
    # apply the EM update map once at the truth; click rows the model
    # cannot reach carry no data and are skipped, as in the solver
    clicks = c.matrix @ apply_loss(truth, 0.6).probs
    response = c.matrix @ loss_matrix(0.6, 8).matrix
    model = response @ truth.probs
    ratio = np.zeros_like(clicks)
    live = model > 0
    ratio[live] = clicks[live] / model[live]
    moved = truth.probs * (response.T @ ratio)
    assert np.max(np.abs(moved - truth.probs)) < 1e-12


def test_em_preserves_normalization():
    rng = np.random.default_rng(3)
    c = convolution_matrix(uniform_bins(8), n_max=20)
    clicks = forward_model(coherent(0.8, n_max=20), 0.45, uniform_bins(8))
    counts = rng.multinomial(50_000, clicks.probs)
    result = em_invert(CountHistogram(counts), 0.45, c)
    assert result.rho.sum() == pytest.approx(1.0, abs=1e-9)
    assert result.rho.min() >= 0


def test_em_accepts_histogram_clicks_and_vector():
    c = convolution_matrix(uniform_bins(4), n_max=6)
    clicks = forward_model(fock(1, n_max=6), 0.5, uniform_bins(4))
    a = em_invert(clicks, 0.5, c, EmOptions(n_max=6))
    b = em_invert(clicks.probs, 0.5, c, EmOptions(n_max=6))
    assert np.allclose(a.rho, b.rho, atol=1e-12)


def test_em_rejects_impossible_clicks():
    c = convolution_matrix(uniform_bins(4), n_max=2)
    freq = np.array([0.5, 0.3, 0.1, 0.1, 0.0])
    with pytest.raises(DomainError):
        em_invert(freq, 0.5, c, EmOptions(n_max=2))


def test_em_shape_guards():
    c = convolution_matrix(uniform_bins(4), n_max=6)
    with pytest.raises(ShapeError):
        em_invert(np.array([1.0, 0, 0, 0, 0]), 0.5, c, EmOptions(n_max=10))
    with pytest.raises(DomainError):
        em_invert(np.array([1.0, 0, 0, 0, 0]), 0.0, c, EmOptions(n_max=4))
    with pytest.raises(ShapeError):
        em_invert(np.array([0.5, 0.3, 0, 0, 0, 0.2, 0.0]), 0.5, c, EmOptions(n_max=4))


def test_fidelity_basics():
    a = fock(1, n_max=5)
    assert fidelity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert fidelity(fock(0, n_max=3), fock(1, n_max=3)) == 0.0
    padded = fidelity(fock(2, n_max=4), fock(2, n_max=9))
    assert padded == pytest.approx(1.0, abs=1e-15)


def test_fidelity_frozen_value():
    # overlap of two Bernoulli-like vectors, computed by hand
    f = fidelity([0.5, 0.5], [0.9, 0.1])
    expected = (math.sqrt(0.45) + math.sqrt(0.05)) ** 2
    assert f == pytest.approx(expected, abs=1e-12)


def test_result_serialization(tmp_path):
    c = convolution_matrix(uniform_bins(8), n_max=8)
    clicks = forward_model(fock(1, n_max=8), 0.5, uniform_bins(8))
    result = em_invert(clicks, 0.5, c, EmOptions(n_max=8))
    d = result.to_dict()
    assert d["method"] == "em"
    assert d["converged"] is True
    path = tmp_path / "rho.csv"
    result.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "n,rho"
    assert len(lines) == result.rho.size + 1
    assert isinstance(InversionResult.trace_to_json(result), str)
