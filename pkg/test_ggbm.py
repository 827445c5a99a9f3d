"""Test script for the grey Gram matrix, the ggBm sampler, densities and S-transforms."""

import json
import math

import numpy as np
import pytest
from scipy import special

from errors import DomainError, ParameterError
from fraccalc import SampledFunction
from ggbm import (
    FracParams,
    PathEnsemble,
    char_fn,
    covariance,
    domain_bound,
    even_moment,
    grey_gram,
    increment_moment,
    kernel_density_estimate,
    marginal_density,
    sample_paths,
    sample_stable,
    sample_tau,
    s_transform_ggbm,
    s_transform_noise,
    scaled_times,
    taus_path,
)
from specfun import mittag_leffler

SEED = 20240611


def z_score(values, target):
    values = np.asarray(values, dtype=float)
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    return abs(values.mean() - target) / stderr


def test_frac_params_ranges():
    assert FracParams(alpha=1.0, beta=1.0).gaussian
    for alpha, beta in ((0.0, 0.5), (2.0, 0.5), (1.0, 0.0), (1.0, 1.5)):
        with pytest.raises(ValueError):
            FracParams(alpha=alpha, beta=beta)


# ---------------------------------------------------------------------------
# Second-moment structure
# ---------------------------------------------------------------------------

def test_grey_gram_examples():
    assert grey_gram([1.0], 0.7).matrix.tolist() == [[1.0]]
    np.testing.assert_allclose(grey_gram([1.0, 2.0], 1.0).matrix, [[1.0, 1.0], [1.0, 2.0]], atol=1e-15)
    gram = grey_gram([0.5, 1.5], 0.8)
    assert gram.matrix[0, 1] == pytest.approx(0.5 * (0.5 ** 0.8 + 1.5 ** 0.8 - 1.0), rel=1e-14)
    assert gram.matrix[0, 1] == pytest.approx(0.4573, abs=1e-4)
    np.testing.assert_allclose(gram.cholesky @ gram.cholesky.T, gram.matrix, atol=1e-14)


def test_grey_gram_is_psd_for_many_times():
    times = np.linspace(0.01, 1.0, 100)
    for alpha in (0.2, 1.0, 1.9):
        gram = grey_gram(times, alpha)
        np.testing.assert_allclose(np.diag(gram.matrix), times ** alpha, rtol=1e-14)
        assert np.min(np.linalg.eigvalsh(gram.matrix)) > -1e-10


@pytest.mark.parametrize("times", [[], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
def test_grey_gram_rejects_bad_times(times):
    with pytest.raises(ParameterError):
        grey_gram(times, 1.0)


def test_covariance_examples():
    assert covariance(1.0, 1.0, FracParams(alpha=1.0, beta=1.0)) == pytest.approx(1.0)
    assert covariance(1.0, 1.0, FracParams(alpha=1.0, beta=0.5)) == pytest.approx(1.1283792, abs=1e-7)
    params = FracParams(alpha=0.6, beta=0.7)
    assert covariance(2.0, 2.0, params) == pytest.approx(2.0 ** 0.6 / math.gamma(1.7), rel=1e-13)


def test_char_fn_examples():
    gram = grey_gram([1.0, 2.0], 1.0)
    assert char_fn([0.0, 0.0], gram, 0.5) == 1.0
    assert char_fn([1.0, 0.0], gram, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-13)
    single = grey_gram([1.7], 0.8)
    expected = mittag_leffler(0.6, -0.5 * 0.9 ** 2 * 1.7 ** 0.8).value
    assert char_fn([0.9], single, 0.6) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(ParameterError):
        char_fn([1.0], gram, 0.5)


def test_even_moment_examples():
    assert even_moment(1, 2.0, FracParams(alpha=0.8, beta=0.6)) == pytest.approx(2.0 ** 0.8 / math.gamma(1.6))
    assert even_moment(2, 1.0, FracParams(alpha=1.0, beta=1.0)) == pytest.approx(3.0)
    for alpha in (0.3, 1.0, 1.7):
        assert even_moment(2, 1.0, FracParams(alpha=alpha, beta=0.5)) == pytest.approx(6.0)
    assert increment_moment(1, 1.5, 1.5, FracParams(alpha=1.0, beta=0.5)) == 0.0


def test_scaled_times_double_the_variance():
    params = FracParams(alpha=0.8, beta=0.6)
    (t2,) = scaled_times([1.3], params.alpha)
    assert covariance(t2, t2, params) == pytest.approx(2.0 * covariance(1.3, 1.3, params), rel=1e-13)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_sample_tau_degenerate_at_one():
    assert np.all(sample_tau(1.0, 1000, seed=SEED) == 1.0)


def test_sample_tau_moments_and_laplace():
    taus = sample_tau(0.5, 1_000_000, seed=SEED)
    assert np.all(taus > 0)
    assert z_score(taus, 1.0 / math.gamma(1.5)) < 3.0
    assert z_score(np.exp(-taus), mittag_leffler(0.5, -1.0).value) < 3.0
    print("✅ M-Wright sampler mean and Laplace transform")


def test_sample_tau_second_moment():
    taus = sample_tau(0.75, 500_000, seed=SEED + 1)
    assert z_score(taus ** 2, 2.0 / math.gamma(2.5)) < 3.0


def test_sample_stable_laplace_transform():
    draws = sample_stable(0.6, 500_000, seed=SEED)
    for s in (0.5, 1.0, 2.0):
        assert z_score(np.exp(-s * draws), math.exp(-s ** 0.6)) < 3.0


def test_sample_tau_is_reproducible():
    np.testing.assert_array_equal(sample_tau(0.3, 100, seed=7), sample_tau(0.3, 100, seed=7))
    assert not np.array_equal(sample_tau(0.3, 100, seed=7), sample_tau(0.3, 100, seed=8))


def test_sample_paths_independent_of_worker_count():
    gram = grey_gram([0.5, 1.0, 1.5], 0.8)
    one = sample_paths(gram, 0.6, 1000, seed=SEED, workers=1, batch_size=128)
    four = sample_paths(gram, 0.6, 1000, seed=SEED, workers=4, batch_size=128)
    np.testing.assert_array_equal(one.samples, four.samples)
    np.testing.assert_array_equal(one.taus, four.taus)
    assert one.samples.shape == (1000, 3)


def test_sample_paths_brownian_marginals():
    gram = grey_gram([1.0, 2.0], 1.0)
    ensemble = sample_paths(gram, 1.0, 100_000, seed=SEED)
    assert np.all(ensemble.taus == 1.0)
    assert z_score(ensemble.samples[:, 1] ** 2, 2.0) < 3.0
    assert z_score(ensemble.samples[:, 0] * ensemble.samples[:, 1], 1.0) < 3.0


def test_sample_paths_variance_and_fourth_moment():
    gram = grey_gram([1.0], 0.8)
    x = sample_paths(gram, 0.6, 100_000, seed=SEED).samples[:, 0]
    assert z_score(x ** 2, 1.0 / math.gamma(1.6)) < 3.0
    x = sample_paths(gram, 0.5, 100_000, seed=SEED + 1).samples[:, 0]
    assert z_score(x ** 4, 6.0) < 3.0
    print("✅ ggBm second and fourth moments")


@pytest.mark.parametrize("alpha,beta", [(0.8, 0.6), (1.4, 0.5), (0.5, 0.9)])
def test_characteristic_function_consistency(alpha, beta):
    times = [0.5, 1.0, 1.5]
    theta = np.array([0.3, -0.5, 0.8])
    gram = grey_gram(times, alpha)
    ensemble = sample_paths(gram, beta, 100_000, seed=SEED)
    assert z_score(np.cos(ensemble.samples @ theta), char_fn(theta, gram, beta)) < 3.0


@pytest.mark.parametrize("t,h", [(1.0, 0.5), (2.0, 1.0)])
def test_stationary_increments(t, h):
    params = FracParams(alpha=0.8, beta=0.6)
    ensemble = sample_paths(grey_gram([t, t + h], params.alpha), params.beta, 100_000, seed=SEED)
    increments = ensemble.samples[:, 1] - ensemble.samples[:, 0]
    lam = 1.3
    expected = char_fn([lam], grey_gram([h], params.alpha), params.beta)
    assert z_score(np.cos(lam * increments), expected) < 3.0


def test_variance_scales_like_t_alpha():
    params = FracParams(alpha=0.8, beta=0.6)
    ensemble = sample_paths(grey_gram([0.5, 1.0, 2.0], params.alpha), params.beta, 100_000, seed=SEED)
    for column, t in enumerate((0.5, 1.0, 2.0)):
        assert z_score(ensemble.samples[:, column] ** 2, covariance(t, t, params)) < 3.0


def test_path_ensemble_csv(tmp_path):
    gram = grey_gram([0.25, 0.5], 1.2)
    ensemble = sample_paths(gram, 0.7, 5, seed=3)
    sidecar = ensemble.to_csv(tmp_path / "paths.csv")
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "t_1,t_2"
    assert len(lines) == 6
    assert taus_path(tmp_path / "paths.csv") == tmp_path / "paths.taus.csv"
    assert (tmp_path / "paths.taus.csv").read_text().splitlines()[0] == "tau"
    meta = json.loads(sidecar.read_text())
    assert meta == {"alpha": 1.2, "beta": 0.7, "n_paths": 5, "seed": 3, "times": [0.25, 0.5]}
    reloaded = PathEnsemble.from_csv(tmp_path / "paths.csv")
    np.testing.assert_array_equal(reloaded.samples, ensemble.samples)
    np.testing.assert_array_equal(reloaded.taus, ensemble.taus)
    np.testing.assert_array_equal(reloaded.times, ensemble.times)
    print("✅ samples and mixing draws survive the CSV round trip")


def test_path_ensemble_single_path_csv(tmp_path):
    ensemble = sample_paths(grey_gram([1.0], 0.5), 0.5, 1, seed=4)
    ensemble.to_csv(tmp_path / "one.csv")
    reloaded = PathEnsemble.from_csv(tmp_path / "one.csv")
    assert reloaded.samples.shape == (1, 1)
    assert reloaded.taus.shape == (1,)
    assert reloaded.taus[0] == ensemble.taus[0]


def test_path_ensemble_rejects_nonpositive_taus():
    with pytest.raises(ValueError):
        PathEnsemble(times=np.array([1.0]), samples=np.zeros((1, 1)), taus=np.array([0.0]), seed=0,
                     alpha=1.0, beta=0.5)


@pytest.mark.parametrize("samples, taus", [
    (np.zeros((3, 2)), np.ones(2)),
    (np.zeros((2, 3)), np.ones(2)),
    (np.zeros(2), np.ones(2)),
])
def test_path_ensemble_rejects_mismatched_shapes(samples, taus):
    with pytest.raises(ValueError, match="do not fit"):
        PathEnsemble(times=np.array([0.5, 1.0]), samples=samples, taus=taus, seed=0, alpha=1.0, beta=0.5)


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def test_marginal_density_gaussian_limit():
    params = FracParams(alpha=0.7, beta=1.0)
    assert marginal_density(0.0, 2.0, params) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi * 2.0 ** 0.7))


def test_marginal_density_at_origin():
    value = marginal_density(0.0, 1.0, FracParams(alpha=0.5, beta=0.5))
    assert value == pytest.approx(1.0 / (math.sqrt(2.0) * math.gamma(0.75)), rel=1e-8)
    assert value == pytest.approx(0.5771, abs=1e-4)


def test_marginal_density_normalized():
    from scipy import integrate

    params = FracParams(alpha=0.5, beta=0.5)
    total, _ = integrate.quad(lambda x: marginal_density(x, 1.0, params), 0.0, np.inf, limit=200)
    assert 2.0 * total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.slow
def test_marginal_density_against_kde():
    params = FracParams(alpha=0.5, beta=0.5)
    bandwidth = 0.1
    samples = sample_paths(grey_gram([1.0], params.alpha), params.beta, 1_000_000, seed=SEED).samples[:, 0]
    xs = np.linspace(-4.0, 4.0, 17)
    estimate = kernel_density_estimate(samples, xs, bandwidth)
    # compare with the density smoothed by the same Epanechnikov window
    nodes, weights = special.roots_legendre(24)
    smoothed = []
    for x in xs:
        ys = x + bandwidth * nodes
        kernel = 0.75 * (1.0 - nodes ** 2)
        smoothed.append(np.sum(weights * kernel * [marginal_density(float(y), 1.0, params) for y in ys]))
    assert np.max(np.abs(estimate - np.array(smoothed))) <= 0.01


def test_kernel_density_estimate_uniform_samples():
    samples = np.linspace(-1.0, 1.0, 200_001)
    estimate = kernel_density_estimate(samples, np.array([0.0, 0.5]), 0.2)
    np.testing.assert_allclose(estimate, [0.5, 0.5], atol=1e-4)
    with pytest.raises(ParameterError):
        kernel_density_estimate(samples, np.array([0.0]), 0.0)


# ---------------------------------------------------------------------------
# S-transforms
# ---------------------------------------------------------------------------

def small_bump(scale=0.1):
    return SampledFunction.from_callable(lambda x: scale * np.exp(-x * x), -10.0, 10.0, 2001)


def test_domain_bound_half_order():
    # E_{1/2}(z) = exp(z^2) erfc(-z); the first zero of erfc has modulus 2.4086
    assert domain_bound(0.5) == pytest.approx(2.4086, abs=0.05)
    assert domain_bound(1.0) == pytest.approx(5.0)


def test_s_transform_of_zero():
    zero = SampledFunction(grid_start=-5.0, grid_step=0.01, values=np.zeros(1001))
    params = FracParams(alpha=0.8, beta=0.6)
    assert s_transform_ggbm(zero, 1.0, params) == 0
    assert s_transform_noise(zero, 1.0, params) == 0


def test_s_transform_brownian_limit():
    params = FracParams(alpha=1.0, beta=1.0)
    phi = small_bump(1.0)
    exact = 0.5 * math.sqrt(math.pi) * math.erf(1.0)
    assert s_transform_ggbm(phi, 1.0, params) == pytest.approx(exact, abs=1e-4)
    assert s_transform_noise(phi, 1.0, params) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_s_transform_noise_is_time_derivative():
    params = FracParams(alpha=0.8, beta=0.6)
    phi = small_bump()
    h = 1e-3
    fd = (s_transform_ggbm(phi, 1.0 + h, params) - s_transform_ggbm(phi, 1.0 - h, params)) / (2 * h)
    noise = s_transform_noise(phi, 1.0, params)
    assert abs(fd - noise) <= 1e-4 * abs(noise)


def test_s_transform_rejects_large_pairing():
    with pytest.raises(DomainError):
        s_transform_ggbm(small_bump(3.0), 1.0, FracParams(alpha=0.8, beta=0.6))


def test_s_transform_window_checks():
    phi = SampledFunction.from_callable(lambda x: 0.1 * np.exp(-x * x), 0.5, 5.0, 451)
    with pytest.raises(ParameterError):
        s_transform_ggbm(phi, 1.0, FracParams(alpha=0.8, beta=0.6))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
