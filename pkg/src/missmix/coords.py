"""Free (unconstrained) coordinates for mixture parameters, with batch
score kernels.

Coordinate layout for a g-component, p-dimensional mixture:

    [ log(pi_k / pi_g) for k = 1..g-1 ]            (g - 1 entries)
    [ all mean entries, component-major ]          (g * p entries)
    [ log-Cholesky entries of the covariance(s) ]  (p(p+1)/2 per block)

The covariance block appears once for a homoscedastic mixture and once
per component otherwise. Log-Cholesky means the lower-triangular factor
stored row by row with the diagonal logged, so every coordinate vector
maps to a valid parameter set and scores need no Lagrange terms.

The score kernels below return per-row gradients of log-likelihood
contributions with respect to these coordinates, for each conditioning
(complete data, marginal, class-given-feature, full model with the
missingness mechanism). They are exact analytic gradients; the
entropy / discriminant features of MAR / MNAR mechanisms are
differentiated through, which is where the mechanism's information about
theta comes from.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import expit

from .errors import ContractViolationError
from .mechanisms import _LOG_CLAMP, MechanismFamily, MechanismSpec
from .mixture import (
    MixtureParams,
    component_loglik_matrix,
    entropy_vector,
)


class FreeCoordinates:
    """Pack/unpack between :class:`MixtureParams` and a free vector."""

    def __init__(self, g: int, p: int, homoscedastic: bool):
        self.g = g
        self.p = p
        self.homoscedastic = homoscedastic
        self.n_cov_blocks = 1 if homoscedastic else g
        self.tril = [(a, c) for a in range(p) for c in range(a + 1)]
        self.block_len = len(self.tril)
        self.mean_offset = g - 1
        self.cov_offset = self.mean_offset + g * p
        self.dim = self.cov_offset + self.n_cov_blocks * self.block_len

    def matches(self, params: MixtureParams) -> bool:
        return (params.g == self.g and params.p == self.p
                and params.homoscedastic == self.homoscedastic)

    def pack(self, params: MixtureParams) -> np.ndarray:
        if not self.matches(params):
            raise ContractViolationError("params do not match this coordinate system")
        s = np.empty(self.dim)
        logw = np.log(params.weights)
        s[: self.g - 1] = logw[:-1] - logw[-1]
        s[self.mean_offset : self.cov_offset] = params.means.reshape(-1)
        for b in range(self.n_cov_blocks):
            L = cholesky(params.covariances[b], lower=True)
            off = self.cov_offset + b * self.block_len
            for k, (a, c) in enumerate(self.tril):
                s[off + k] = np.log(L[a, a]) if a == c else L[a, c]
        return s

    def unpack(self, s: np.ndarray) -> MixtureParams:
        s = np.asarray(s, dtype=float)
        logits = np.concatenate([s[: self.g - 1], [0.0]])
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        means = s[self.mean_offset : self.cov_offset].reshape(self.g, self.p)
        covs = np.empty((self.g, self.p, self.p))
        for b in range(self.n_cov_blocks):
            L = np.zeros((self.p, self.p))
            off = self.cov_offset + b * self.block_len
            for k, (a, c) in enumerate(self.tril):
                L[a, c] = np.exp(s[off + k]) if a == c else s[off + k]
            covs[b] = L @ L.T
        if self.homoscedastic:
            covs[1:] = covs[0]
        return MixtureParams(g=self.g, weights=w, means=means, covariances=covs,
                             homoscedastic=self.homoscedastic)


def h_gradient_tensor(Y: np.ndarray, params: MixtureParams,
                      coords: FreeCoordinates) -> np.ndarray:
    """(n, g, d) tensor of d[log pi_i + log f_i(y_j)] / d coords.

    The building block for every score: complete-data scores pick the
    labelled component's slice, marginal scores mix slices with the
    posterior, and mechanism feature gradients are linear combinations.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    g, p = coords.g, coords.p
    G = np.zeros((n, g, coords.dim))

    # weight logits: d log pi_i / d s_k = delta_ik - pi_k, constant per row
    pik = params.weights[: g - 1]
    for i in range(g):
        G[:, i, : g - 1] = -pik
        if i < g - 1:
            G[:, i, i] += 1.0

    for i in range(g):
        b = 0 if coords.homoscedastic else i
        L = params._chols[b]
        diff = (Y - params.means[i]).T                       # (p, n)
        V = solve_triangular(L, diff, lower=True)            # L^{-1} r
        W = solve_triangular(L.T, V, lower=False)            # Sigma^{-1} r
        mo = coords.mean_offset + i * p
        G[:, i, mo : mo + p] = W.T
        off = coords.cov_offset + b * coords.block_len
        for k, (a, c) in enumerate(coords.tril):
            if a == c:
                G[:, i, off + k] = -1.0 + W[a] * V[a] * L[a, a]
            else:
                G[:, i, off + k] = W[a] * V[c]
    return G


def _posterior_from_h(H: np.ndarray) -> np.ndarray:
    t = H - H.max(axis=1, keepdims=True)
    tau = np.exp(t)
    tau /= tau.sum(axis=1, keepdims=True)
    return tau


def _entropy_gradient(tau: np.ndarray, ent: np.ndarray, G: np.ndarray) -> np.ndarray:
    """(n, d) gradient of the posterior entropy through the h_i."""
    with np.errstate(divide="ignore"):
        logtau = np.where(tau > 0.0, np.log(np.maximum(tau, 1e-300)), 0.0)
    c = -tau * (logtau + ent[:, None])          # (n, g); -> 0 as tau -> 0
    return np.einsum("ng,ngd->nd", c, G)


def score_batch(Y: np.ndarray, labels: np.ndarray | None, missing: np.ndarray,
                params: MixtureParams, coords: FreeCoordinates,
                spec: MechanismSpec | None = None,
                kind: str = "auto") -> np.ndarray:
    """(n, d) per-row score vectors under the requested conditioning.

    kinds:
        "complete"    -- d log[pi_z f_z(y)], labels required everywhere.
        "marginal"    -- d log[sum_i pi_i f_i(y)].
        "conditional" -- d log Pr(z | y) (class-given-feature, the
                         logistic-regression score); labels required.
        "full"        -- d of the full-likelihood contribution including
                         the missingness term (spec required); labelled
                         rows use (y, z, m=0), unlabelled (y, m=1).
        "auto"        -- complete where m = 0, marginal where m = 1
                         (the ignorable-likelihood score).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    missing = np.asarray(missing, dtype=np.int64).reshape(-1)
    G = h_gradient_tensor(Y, params, coords)
    H = component_loglik_matrix(Y, params) + params.log_weights()
    tau = _posterior_from_h(H)
    s_marg = np.einsum("ng,ngd->nd", tau, G)

    idx = None
    if labels is not None:
        idx = np.asarray(labels, dtype=np.int64).reshape(-1) - 1

    def complete_rows():
        if idx is None:
            raise ContractViolationError(f"'{kind}' scores require labels")
        return G[np.arange(n), idx, :]

    if kind == "marginal":
        return s_marg
    if kind == "complete":
        return complete_rows()
    if kind == "conditional":
        return complete_rows() - s_marg
    if kind == "auto":
        out = s_marg.copy()
        obs = missing == 0
        if np.any(obs):
            if idx is None:
                raise ContractViolationError("labelled rows present but labels missing")
            out[obs] = G[np.nonzero(obs)[0], idx[obs], :]
        return out
    if kind != "full":
        raise ContractViolationError(f"unknown score kind {kind!r}")

    if spec is None:
        raise ContractViolationError("full-likelihood scores need a mechanism spec")
    out = np.empty((n, coords.dim))
    obs = missing == 0
    unobs = ~obs

    if spec.family is MechanismFamily.MCAR:
        # mechanism term is theta-free
        if np.any(obs):
            out[obs] = G[np.nonzero(obs)[0], idx[obs], :]
        out[unobs] = s_marg[unobs]
        return out

    if spec.family is MechanismFamily.MAR_ENTROPY:
        ent = entropy_vector(tau)
        grad_e = _entropy_gradient(tau, ent, G)
        eta = spec.xi[0] + spec.xi[1] * ent
        sig = expit(eta)
        # the clamp flattens the mechanism term, zeroing its gradient
        act_obs = -np.logaddexp(0.0, eta) > _LOG_CLAMP
        act_unobs = -np.logaddexp(0.0, -eta) > _LOG_CLAMP
        if np.any(obs):
            rows = np.nonzero(obs)[0]
            coef = sig[obs] * spec.xi[1] * act_obs[obs]
            out[obs] = G[rows, idx[obs], :] - coef[:, None] * grad_e[obs]
        coef = (1.0 - sig[unobs]) * spec.xi[1] * act_unobs[unobs]
        out[unobs] = s_marg[unobs] + coef[:, None] * grad_e[unobs]
        return out

    # MNAR_CLASS: b = h_1 - h_2 exactly (g = 2 enforced upstream)
    if params.g != 2:
        raise ContractViolationError("MNAR_CLASS scores require g = 2")
    bvec = H[:, 0] - H[:, 1]
    grad_b = G[:, 0, :] - G[:, 1, :]
    intercepts = spec.xi[0::2]
    slopes = spec.xi[1::2]
    eta = intercepts[None, :] + bvec[:, None] * slopes[None, :]    # (n, 2)
    sig = expit(eta)
    act_obs = -np.logaddexp(0.0, eta) > _LOG_CLAMP
    act_unobs = -np.logaddexp(0.0, -eta) > _LOG_CLAMP
    if np.any(obs):
        rows = np.nonzero(obs)[0]
        zi = idx[obs]
        coef = sig[rows, zi] * slopes[zi] * act_obs[rows, zi]
        out[obs] = G[rows, zi, :] - coef[:, None] * grad_b[obs]
    if np.any(unobs):
        rows = np.nonzero(unobs)[0]
        # responsibilities under the full model: h_i + log sigma(eta_i)
        log_sig = np.maximum(-np.logaddexp(0.0, -eta[rows]), _LOG_CLAMP)
        tau_full = _posterior_from_h(H[rows] + log_sig)
        mech = (1.0 - sig[rows]) * slopes[None, :] * act_unobs[rows]  # (m, 2)
        base = np.einsum("ng,ngd->nd", tau_full, G[rows])
        out[rows] = base + (tau_full * mech).sum(axis=1)[:, None] * grad_b[rows]
    return out


def _row_lse(H: np.ndarray) -> np.ndarray:
    m = H.max(axis=1)
    return m + np.log(np.exp(H - m[:, None]).sum(axis=1))


def full_value_and_grad(Y: np.ndarray, labels: np.ndarray, missing: np.ndarray,
                        params: MixtureParams, spec: MechanismSpec,
                        coords: FreeCoordinates):
    """Full log-likelihood with its exact gradient in (theta coords, xi),
    computed in one pass. The optimizer's hot path: shares every
    intermediate (component logliks, posteriors, feature gradients)
    between the value and both gradients.

    Returns (value, theta_grad, xi_grad).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    missing = np.asarray(missing, dtype=np.int64).reshape(-1)
    idx = np.asarray(labels, dtype=np.int64).reshape(-1) - 1
    obs = missing == 0
    rows_o = np.nonzero(obs)[0]
    rows_u = np.nonzero(~obs)[0]
    m_f = missing.astype(float)

    G = h_gradient_tensor(Y, params, coords)
    H = component_loglik_matrix(Y, params) + params.log_weights()
    theta_grad = np.zeros(coords.dim)
    value = 0.0

    if spec.family is MechanismFamily.MNAR_CLASS:
        bvec = H[:, 0] - H[:, 1]
        grad_b = G[:, 0, :] - G[:, 1, :]
        intercepts = spec.xi[0::2]
        slopes = spec.xi[1::2]
        eta = intercepts[None, :] + bvec[:, None] * slopes[None, :]
        sig = expit(eta)
        log_sig = np.maximum(-np.logaddexp(0.0, -eta), _LOG_CLAMP)
        log_1msig = np.maximum(-np.logaddexp(0.0, eta), _LOG_CLAMP)
        xi_grad = np.zeros(4)
        if rows_o.size:
            zi = idx[rows_o]
            value += float((H[rows_o, zi] + log_1msig[rows_o, zi]).sum())
            theta_grad += G[rows_o, zi, :].sum(axis=0)
            coef = sig[rows_o, zi] * slopes[zi]
            theta_grad -= coef @ grad_b[rows_o]
            for i in range(2):
                sel = rows_o[zi == i]
                if sel.size:
                    s = sig[sel, i]
                    xi_grad[2 * i] += float(-s.sum())
                    xi_grad[2 * i + 1] += float(-(s * bvec[sel]).sum())
        if rows_u.size:
            A = H[rows_u] + log_sig[rows_u]
            value += float(_row_lse(A).sum())
            tau_full = _posterior_from_h(A)
            theta_grad += np.einsum("ng,ngd->d", tau_full, G[rows_u])
            w = tau_full * (1.0 - sig[rows_u])          # (m, 2)
            theta_grad += (w * slopes[None, :]).sum(axis=1) @ grad_b[rows_u]
            xi_grad[0::2] += w.sum(axis=0)
            xi_grad[1::2] += bvec[rows_u] @ w
        return value, theta_grad, xi_grad

    tau = _posterior_from_h(H)
    if spec.family is MechanismFamily.MCAR:
        eta = float(spec.xi[0])
        sig = expit(eta)
        log_sig = max(-np.logaddexp(0.0, -eta), _LOG_CLAMP)
        log_1msig = max(-np.logaddexp(0.0, eta), _LOG_CLAMP)
        value += float(rows_o.size) * log_1msig + float(rows_u.size) * log_sig
        xi_grad = np.array([float((m_f - sig).sum())])
        if rows_o.size:
            zi = idx[rows_o]
            value += float(H[rows_o, zi].sum())
            theta_grad += G[rows_o, zi, :].sum(axis=0)
        if rows_u.size:
            value += float(_row_lse(H[rows_u]).sum())
            theta_grad += np.einsum("ng,ngd->d", tau[rows_u], G[rows_u])
        return value, theta_grad, xi_grad

    # MAR_ENTROPY
    ent = entropy_vector(tau)
    grad_e = _entropy_gradient(tau, ent, G)
    eta = spec.xi[0] + spec.xi[1] * ent
    sig = expit(eta)
    log_sig = np.maximum(-np.logaddexp(0.0, -eta), _LOG_CLAMP)
    log_1msig = np.maximum(-np.logaddexp(0.0, eta), _LOG_CLAMP)
    resid = m_f - sig
    xi_grad = np.array([float(resid.sum()), float(resid @ ent)])
    if rows_o.size:
        zi = idx[rows_o]
        value += float((H[rows_o, zi] + log_1msig[rows_o]).sum())
        theta_grad += G[rows_o, zi, :].sum(axis=0)
        theta_grad -= (sig[rows_o] * spec.xi[1]) @ grad_e[rows_o]
    if rows_u.size:
        value += float((_row_lse(H[rows_u]) + log_sig[rows_u]).sum())
        theta_grad += np.einsum("ng,ngd->d", tau[rows_u], G[rows_u])
        theta_grad += ((1.0 - sig[rows_u]) * spec.xi[1]) @ grad_e[rows_u]
    return value, theta_grad, xi_grad
