"""Mixture primitives: densities, posteriors, entropy, discriminant."""

import numpy as np
import pytest

from missmix import (
    ContractViolationError,
    InvalidParameterError,
    MixtureParams,
    NonSPDCovarianceError,
    PartialDataset,
    PosteriorRow,
    UnsupportedConfigError,
    component_logpdf,
    discriminant,
    entropy,
    posterior_tau,
    univariate_mixture,
)
from missmix.mixture import component_loglik_matrix, posterior_matrix

from conftest import random_params


class TestComponentLogpdf:
    def test_standard_normal_at_mode(self):
        assert component_logpdf(0.0, 0.0, 1.0) == pytest.approx(
            -0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_bivariate_at_mode(self):
        got = component_logpdf([1.0, 2.0], [1.0, 2.0], np.eye(2))
        assert got == pytest.approx(-np.log(2 * np.pi), abs=1e-12)

    def test_offset_scalar(self):
        # direct evaluation of -0.5 log(2 pi s2) - (y-mu)^2 / (2 s2)
        expected = -0.5 * np.log(2 * np.pi * 4.0) - (3.0 - 1.0) ** 2 / 8.0
        assert component_logpdf(3.0, 1.0, 4.0) == pytest.approx(expected, abs=1e-12)

    def test_non_spd_names_eigenvalue(self):
        cov = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues -1, 3
        with pytest.raises(NonSPDCovarianceError) as err:
            component_logpdf([0.0, 0.0], [0.0, 0.0], cov)
        assert err.value.eigenvalue == pytest.approx(-1.0, abs=1e-9)

    def test_quadrature_integrates_to_one(self):
        # brute-force trapezoid on a sigma/1000 grid spanning +-10 sigma
        mu, sigma2 = 0.7, 2.3
        sigma = np.sqrt(sigma2)
        grid = np.arange(mu - 10 * sigma, mu + 10 * sigma + sigma / 2000,
                         sigma / 1000)
        params = univariate_mixture([0.5, 0.5], [mu, mu], sigma2)
        dens = np.exp(component_loglik_matrix(grid.reshape(-1, 1), params)[:, 0])
        integral = np.trapezoid(dens, grid)
        assert integral == pytest.approx(1.0, abs=1e-6)
        # the per-point operation is the same density
        for y in (mu - 1.0, mu, mu + 2.5):
            one = component_logpdf(y, mu, sigma2)
            batch = component_loglik_matrix(np.array([[y]]), params)[0, 0]
            assert one == pytest.approx(batch, abs=1e-12)


class TestPosteriorTau:
    def test_symmetric_midpoint(self, canonical_pair):
        row = posterior_tau([0.0], canonical_pair)
        assert row.tau == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_log_odds_formula(self, canonical_pair):
        # tau_2 = 1 / (1 + exp(-2)) at y = +1
        row = posterior_tau([1.0], canonical_pair)
        assert row.tau[1] == pytest.approx(1.0 / (1.0 + np.exp(-2.0)), abs=1e-12)

    def test_exchangeable_components(self):
        params = MixtureParams(
            g=3, weights=np.ones(3) / 3, means=np.zeros((3, 1)),
            covariances=np.ones((3, 1, 1)), homoscedastic=True)
        for y in (-3.0, 0.0, 5.0):
            assert posterior_tau([y], params).tau == pytest.approx(
                [1 / 3] * 3, abs=1e-12)

    def test_sums_to_one_fuzz(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            params = random_params(rng)
            y = rng.normal(scale=3.0, size=params.p)
            row = posterior_tau(y, params)
            assert abs(row.tau.sum() - 1.0) <= 1e-12

    def test_no_underflow_far_out(self, canonical_pair):
        # log-space evaluation keeps far tails finite and normalized
        row = posterior_tau([300.0], canonical_pair)
        assert np.all(np.isfinite(row.tau))
        assert row.tau.sum() == pytest.approx(1.0, abs=1e-12)


class TestEntropy:
    def test_uniform_two(self):
        assert entropy([0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)

    def test_degenerate(self):
        assert entropy([1.0, 0.0]) == 0.0

    def test_skewed(self):
        expected = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
        assert entropy([0.9, 0.1]) == pytest.approx(expected, abs=1e-12)

    def test_negative_entry_rejected(self):
        with pytest.raises(ContractViolationError):
            entropy([1.1, -0.1])

    def test_bad_sum_rejected(self):
        with pytest.raises(ContractViolationError):
            entropy([0.6, 0.5])

    def test_maximal_when_components_identical(self):
        rng = np.random.default_rng(3)
        for g in (2, 3):
            mean = rng.normal(size=1)
            params = MixtureParams(
                g=g, weights=np.ones(g) / g,
                means=np.repeat(mean.reshape(1, 1), g, axis=0),
                covariances=np.ones((g, 1, 1)), homoscedastic=True)
            for _ in range(10):
                y = rng.normal(scale=4.0, size=1)
                row = posterior_tau(y, params)
                assert row.entropy == pytest.approx(np.log(g), abs=1e-12)


class TestDiscriminant:
    def test_midpoint_zero(self, canonical_pair):
        assert discriminant([0.0], canonical_pair) == pytest.approx(0.0, abs=1e-12)

    def test_matches_posterior_log_odds(self, canonical_pair):
        # b(y) = log tau_1/tau_2; at y=+1 the odds favor class 2 by e^2
        got = discriminant([1.0], canonical_pair)
        assert got == pytest.approx(-2.0, abs=1e-12)

    def test_prior_odds_at_midpoint(self):
        params = univariate_mixture([0.75, 0.25], [-1.0, 1.0], 1.0)
        assert discriminant([0.0], params) == pytest.approx(np.log(3.0), abs=1e-12)

    def test_consistent_with_posterior_fuzz(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            params = random_params(rng, g=2, homoscedastic=True)
            y = rng.normal(scale=2.0, size=params.p)
            tau = posterior_tau(y, params).tau
            if min(tau) <= 1e-12:
                continue
            got = np.exp(discriminant(y, params))
            assert got == pytest.approx(tau[0] / tau[1], rel=1e-10)

    def test_rejects_three_components(self):
        params = MixtureParams(
            g=3, weights=np.ones(3) / 3, means=np.zeros((3, 1)),
            covariances=np.ones((3, 1, 1)), homoscedastic=True)
        with pytest.raises(UnsupportedConfigError):
            discriminant([0.0], params)

    def test_rejects_heteroscedastic(self):
        params = MixtureParams(
            g=2, weights=[0.5, 0.5], means=[[-1.0], [1.0]],
            covariances=np.array([[[1.0]], [[2.0]]]), homoscedastic=False)
        with pytest.raises(UnsupportedConfigError):
            discriminant([0.0], params)


class TestMixtureParams:
    def test_weights_must_sum(self):
        with pytest.raises(InvalidParameterError):
            MixtureParams(g=2, weights=[0.6, 0.5], means=[[0.0], [1.0]],
                          covariances=np.ones((2, 1, 1)), homoscedastic=True)

    def test_weights_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            MixtureParams(g=2, weights=[1.0, 0.0], means=[[0.0], [1.0]],
                          covariances=np.ones((2, 1, 1)), homoscedastic=True)

    def test_covariance_floor(self):
        with pytest.raises(NonSPDCovarianceError):
            MixtureParams(g=2, weights=[0.5, 0.5], means=[[0.0], [1.0]],
                          covariances=np.full((2, 1, 1), 1e-12),
                          homoscedastic=True)

    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.3], [0.2, 1.0]])
        with pytest.raises(InvalidParameterError):
            MixtureParams(g=2, weights=[0.5, 0.5],
                          means=np.zeros((2, 2)),
                          covariances=np.stack([cov, cov]), homoscedastic=True)

    def test_homoscedastic_requires_identical(self):
        covs = np.array([[[1.0]], [[1.0 + 1e-15]]])
        with pytest.raises(InvalidParameterError):
            MixtureParams(g=2, weights=[0.5, 0.5], means=[[0.0], [1.0]],
                          covariances=covs, homoscedastic=True)

    def test_values_immutable(self, canonical_pair):
        with pytest.raises(ValueError):
            canonical_pair.weights[0] = 0.9


class TestPartialDataset:
    def test_label_range_enforced(self):
        with pytest.raises(InvalidParameterError):
            PartialDataset(g=2, features=[[0.0]], labels=[3], missing=[0])

    def test_observed_accessors_hide_masked_labels(self):
        data = PartialDataset(g=2, features=[[0.0], [1.0], [2.0]],
                              labels=[1, 2, 1], missing=[0, 1, 0])
        assert data.observed_label(0) == 1
        assert data.observed_label(1) is None
        assert list(data.observed_labels_array()) == [1, 1, 1]
        onehot = data.observed_onehot()
        assert onehot[1].sum() == 0.0
        assert onehot[0, 0] == 1.0 and onehot[2, 0] == 1.0

    def test_reveal_all(self):
        data = PartialDataset(g=2, features=[[0.0], [1.0]], labels=[1, 2],
                              missing=[1, 1])
        full = data.reveal_all()
        assert full.n_labelled == 2
        assert list(full.labels) == [1, 2]

    def test_empty_rejected(self):
        with pytest.raises(InvalidParameterError):
            PartialDataset(g=2, features=np.zeros((0, 1)), labels=[], missing=[])


class TestPosteriorRow:
    def test_invariants_enforced(self):
        with pytest.raises(InvalidParameterError):
            PosteriorRow(tau=np.array([0.7, 0.4]), entropy=0.5)
        with pytest.raises(InvalidParameterError):
            PosteriorRow(tau=np.array([0.5, 0.5]), entropy=5.0)

    def test_batch_matches_per_point(self, canonical_pair):
        rng = np.random.default_rng(11)
        Y = rng.normal(size=(20, 1))
        batch = posterior_matrix(Y, canonical_pair)
        for j in range(20):
            row = posterior_tau(Y[j], canonical_pair)
            assert row.tau == pytest.approx(batch[j], abs=1e-14)
