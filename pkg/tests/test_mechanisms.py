"""Missingness mechanisms: probabilities, log-likelihoods, xi gradients."""

import numpy as np
import pytest
from scipy.special import expit

from missmix import (
    ContractViolationError,
    InvalidParameterError,
    MechanismFamily,
    MechanismSpec,
    mechanism_grad_xi,
    mechanism_loglik,
    mechanism_loglik_per_class,
    miss_prob,
    univariate_mixture,
)
from missmix.mechanisms import (
    mar_features,
    miss_prob_matrix,
    newton_update_xi,
)

from conftest import random_params


def fd_grad_xi(row, spec, params, weights=None, h=1e-6):
    """Central finite differences of the row's mechanism log-likelihood."""
    y, label, m = row

    def value(xi):
        s = MechanismSpec(spec.family, xi)
        if spec.family is MechanismFamily.MNAR_CLASS and m == 1:
            return float(weights @ mechanism_loglik_per_class(y, m, s, params))
        return mechanism_loglik(row, s, params)

    out = np.zeros_like(spec.xi)
    for k in range(len(out)):
        up, dn = spec.xi.copy(), spec.xi.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (value(up) - value(dn)) / (2 * h)
    return out


class TestMechanismSpec:
    def test_arity_enforced(self):
        with pytest.raises(InvalidParameterError):
            MechanismSpec(MechanismFamily.MCAR, [0.0, 1.0])
        with pytest.raises(InvalidParameterError):
            MechanismSpec(MechanismFamily.MNAR_CLASS, [0.0, 1.0])

    def test_finite_enforced(self):
        with pytest.raises(InvalidParameterError):
            MechanismSpec(MechanismFamily.MAR_ENTROPY, [0.0, np.inf])

    def test_family_from_string(self):
        spec = MechanismSpec("MCAR", [0.3])
        assert spec.family is MechanismFamily.MCAR


class TestMissProb:
    def test_mcar_half(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [0.0])
        for y in (-4.0, 0.0, 17.0):
            assert miss_prob([y], None, spec, canonical_pair) == 0.5

    def test_mcar_constant_in_y(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [0.37])
        rng = np.random.default_rng(0)
        probs = miss_prob_matrix(rng.normal(size=(1000, 1)), spec, canonical_pair)
        assert probs.max() - probs.min() == 0.0

    def test_mar_entropy_intercept_only(self, canonical_pair):
        # a point far out has entropy 0 to double precision
        spec = MechanismSpec(MechanismFamily.MAR_ENTROPY, [-1.0, 2.0])
        got = miss_prob([-50.0], None, spec, canonical_pair)
        assert got == pytest.approx(expit(-1.0), abs=1e-12)

    def test_mar_entropy_at_boundary(self, canonical_pair):
        # e(0) = log 2 exactly, so p = sigma(-1 + 2 log 2) = 4 / (e + 4)
        spec = MechanismSpec(MechanismFamily.MAR_ENTROPY, [-1.0, 2.0])
        got = miss_prob([0.0], None, spec, canonical_pair)
        assert got == pytest.approx(4.0 / (np.e + 4.0), abs=1e-12)

    def test_mar_monotone_in_entropy(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MAR_ENTROPY, [-1.0, 2.0])
        grid = np.linspace(-4.0, 4.0, 201).reshape(-1, 1)
        e = mar_features(grid, canonical_pair)
        p = miss_prob_matrix(grid, spec, canonical_pair)[:, 0]
        order = np.argsort(e)
        assert np.all(np.diff(p[order]) >= -1e-12)

    def test_mnar_requires_class(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MNAR_CLASS, [0.5, 1.0, -0.5, 0.0])
        with pytest.raises(ContractViolationError):
            miss_prob([0.0], None, spec, canonical_pair)

    def test_mnar_uses_discriminant(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MNAR_CLASS, [0.5, 1.0, -0.5, 0.0])
        # at the midpoint b = 0: class rates are sigma of the intercepts
        assert miss_prob([0.0], 1, spec, canonical_pair) == pytest.approx(
            expit(0.5), abs=1e-12)
        assert miss_prob([0.0], 2, spec, canonical_pair) == pytest.approx(
            expit(-0.5), abs=1e-12)

    def test_clamped(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [200.0])
        assert miss_prob([0.0], None, spec, canonical_pair) == 1.0 - 1e-12


class TestMechanismLoglik:
    def test_mcar_labelled(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [0.0])
        got = mechanism_loglik(([0.3], 1, 0), spec, canonical_pair)
        assert got == pytest.approx(np.log(0.5), abs=1e-12)

    def test_mar_labelled_zero_entropy(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MAR_ENTROPY, [-1.0, 2.0])
        got = mechanism_loglik(([-50.0], 2, 0), spec, canonical_pair)
        assert got == pytest.approx(np.log(1.0 - expit(-1.0)), abs=1e-12)

    def test_mnar_vector_all_zero_coefs(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MNAR_CLASS, np.zeros(4))
        got = mechanism_loglik_per_class([0.4], 1, spec, canonical_pair)
        assert got == pytest.approx([np.log(0.5), np.log(0.5)], abs=1e-12)

    def test_scalar_form_undefined_for_unlabelled_mnar(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MNAR_CLASS, np.zeros(4))
        with pytest.raises(ContractViolationError):
            mechanism_loglik(([0.4], None, 1), spec, canonical_pair)


class TestGradXi:
    def test_mcar_labelled_value(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [0.0])
        got = mechanism_grad_xi(([0.1], 1, 0), spec, canonical_pair)
        assert got == pytest.approx([-0.5], abs=1e-12)

    def test_mcar_unlabelled_value(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MCAR, [0.0])
        got = mechanism_grad_xi(([0.1], None, 1), spec, canonical_pair)
        assert got == pytest.approx([0.5], abs=1e-12)

    def test_weights_contract(self, canonical_pair):
        spec = MechanismSpec(MechanismFamily.MNAR_CLASS, np.zeros(4))
        with pytest.raises(ContractViolationError):
            mechanism_grad_xi(([0.1], None, 1), spec, canonical_pair)
        with pytest.raises(ContractViolationError):
            mechanism_grad_xi(([0.1], None, 1), spec, canonical_pair,
                              weights=[0.2, 0.3, 0.5])
        with pytest.raises(ContractViolationError):
            mechanism_grad_xi(([0.1], 1, 0), spec, canonical_pair,
                              weights=[0.5, 0.5])

    def test_matches_finite_differences_fuzz(self):
        rng = np.random.default_rng(123)
        checked = 0
        while checked < 100:
            params = random_params(rng, g=2, homoscedastic=True)
            family = [MechanismFamily.MCAR, MechanismFamily.MAR_ENTROPY,
                      MechanismFamily.MNAR_CLASS][checked % 3]
            xi = rng.normal(scale=1.5, size=family.xi_len)
            spec = MechanismSpec(family, xi)
            y = rng.normal(scale=2.0, size=params.p)
            m = int(rng.random() < 0.5)
            label = int(rng.integers(1, 3)) if m == 0 else None
            weights = None
            if family is MechanismFamily.MNAR_CLASS and m == 1:
                weights = rng.dirichlet([1.0, 1.0])
            analytic = mechanism_grad_xi((y, label, m), spec, params,
                                         weights=weights)
            fd = fd_grad_xi((y, label, m), spec, params, weights=weights)
            rel = np.max(np.abs(analytic - fd)) / max(1.0, np.max(np.abs(fd)))
            assert rel < 1e-6
            checked += 1

    def test_stationarity_at_fitted_xi(self, canonical_pair):
        # summed gradients vanish at the Newton maximizer for every family
        rng = np.random.default_rng(5)
        n = 300
        Y = rng.normal(scale=1.5, size=(n, 1))
        missing = rng.integers(0, 2, size=n)
        labels = rng.integers(1, 3, size=n)
        resp = np.zeros((n, 2))
        obs = missing == 0
        resp[obs, labels[obs] - 1] = 1.0
        resp[~obs] = rng.dirichlet([1.0, 1.0], size=int((~obs).sum()))
        for family in MechanismFamily:
            if family is MechanismFamily.MCAR:
                feats = None
            elif family is MechanismFamily.MAR_ENTROPY:
                feats = mar_features(Y, canonical_pair)
            else:
                from missmix.mechanisms import mnar_features
                feats = mnar_features(Y, canonical_pair)
            xi0 = np.zeros(family.xi_len)
            xi_hat = newton_update_xi(xi0, family, feats, resp, missing)
            spec = MechanismSpec(family, xi_hat)
            total = np.zeros(family.xi_len)
            for j in range(n):
                m = int(missing[j])
                label = int(labels[j]) if m == 0 else None
                w = None
                if family is MechanismFamily.MNAR_CLASS and m == 1:
                    w, label = resp[j], None
                total += mechanism_grad_xi((Y[j], label, m), spec,
                                           canonical_pair, weights=w)
            assert np.max(np.abs(total)) < 1e-5
