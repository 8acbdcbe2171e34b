"""Gaussian mixture primitives.

Densities, posterior class probabilities, posterior entropy, and the
two-class linear discriminant. Everything is computed in log space
(log-sum-exp) so that unlabelled likelihood terms do not underflow at
moderate component separation.

Conventions:
    * class labels are 1-based (values in ``{1..g}``), matching the
      on-disk dataset format; component indices into arrays are 0-based.
    * all values are immutable after construction and safe to share
      across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cholesky, solve_triangular

from .errors import (
    ContractViolationError,
    InvalidParameterError,
    NonSPDCovarianceError,
    UnsupportedConfigError,
)

_LOG_2PI = float(np.log(2.0 * np.pi))

# Eigenvalue floor below which a covariance is rejected as non-SPD.
SPD_EIG_FLOOR = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    """Average with the transpose; M-step round-off can leave a covariance
    asymmetric at the 1e-16 level, which Cholesky must not see."""
    return 0.5 * (cov + cov.T)


def _check_spd(cov: np.ndarray, component: int | None = None) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidParameterError(f"covariance must be square, got shape {cov.shape}")
    asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    if asym > 1e-12:
        raise InvalidParameterError(
            f"covariance asymmetric by {asym:.3e} (tolerance 1e-12)"
        )
    sym = _symmetrize(cov)
    smallest = float(np.linalg.eigvalsh(sym)[0])
    if smallest < SPD_EIG_FLOOR:
        raise NonSPDCovarianceError(smallest, component)
    return sym


@dataclass(frozen=True)
class MixtureParams:
    """Full parameter set of a g-component Gaussian mixture.

    Attributes:
        g: number of components (>= 2).
        weights: mixing proportions, shape (g,), positive, summing to 1.
        means: component means, shape (g, p).
        covariances: component covariances, shape (g, p, p), each SPD.
        homoscedastic: if True all components share one covariance
            (entries are required to be bitwise identical).
    """

    g: int
    weights: NDArray[np.float64]
    means: NDArray[np.float64]
    covariances: NDArray[np.float64]
    homoscedastic: bool = False

    # Cholesky factors, their inverses, and log-determinants, precomputed
    # at construction (likelihood loops must not refactorize).
    _chols: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    _chol_invs: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    _logdets: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = int(self.g)
        if g < 2:
            raise InvalidParameterError(f"need g >= 2 components, got {g}")
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 2:  # single shared matrix shorthand
            covs = np.repeat(covs[None, :, :], g, axis=0)
        if weights.shape != (g,):
            raise InvalidParameterError(f"weights must have length g={g}")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise InvalidParameterError(
                f"weights must sum to 1 within 1e-12, got sum {weights.sum()!r}"
            )
        if np.any(weights <= 0.0):
            raise InvalidParameterError("every weight must be > 0")
        if means.shape[0] != g:
            raise InvalidParameterError(f"means must have g={g} rows")
        p = means.shape[1]
        if covs.shape != (g, p, p):
            raise InvalidParameterError(
                f"covariances must have shape ({g}, {p}, {p}), got {covs.shape}"
            )
        if p == 1:
            vars_ = covs[:, 0, 0]
            low = float(vars_.min())
            if low < SPD_EIG_FLOOR:
                raise NonSPDCovarianceError(low, int(np.argmin(vars_)))
            sym = covs.copy()
        else:
            sym = np.empty_like(covs)
            for i in range(g):
                sym[i] = _check_spd(covs[i], component=i)
        if self.homoscedastic:
            for i in range(1, g):
                if not np.array_equal(covs[0], covs[i]):
                    raise InvalidParameterError(
                        "homoscedastic mixtures require bitwise-identical covariances"
                    )
        chols = np.empty_like(sym)
        invs = np.empty_like(sym)
        logdets = np.empty(g)
        if p == 1:
            chols[:, 0, 0] = np.sqrt(sym[:, 0, 0])
            invs[:, 0, 0] = 1.0 / chols[:, 0, 0]
            logdets[:] = np.log(sym[:, 0, 0])
        else:
            for i in range(g):
                chols[i] = cholesky(sym[i], lower=True)
                invs[i] = solve_triangular(chols[i], np.eye(p), lower=True)
                logdets[i] = 2.0 * float(np.sum(np.log(np.diag(chols[i]))))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "means", _readonly(means))
        object.__setattr__(self, "covariances", _readonly(sym))
        object.__setattr__(self, "_chols", _readonly(chols))
        object.__setattr__(self, "_chol_invs", _readonly(invs))
        object.__setattr__(self, "_logdets", _readonly(logdets))

    @property
    def p(self) -> int:
        """Feature dimension."""
        return self.means.shape[1]

    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def univariate_mixture(
    weights: ArrayLike,
    means: ArrayLike,
    variances: ArrayLike | float,
    homoscedastic: bool | None = None,
) -> MixtureParams:
    """Convenience constructor for p = 1 mixtures.

    ``variances`` may be one scalar (shared, homoscedastic) or one value
    per component.
    """
    weights = np.asarray(weights, dtype=float)
    g = weights.shape[0]
    means = np.asarray(means, dtype=float).reshape(g, 1)
    var = np.asarray(variances, dtype=float).reshape(-1)
    if var.shape[0] == 1:
        var = np.repeat(var, g)
        if homoscedastic is None:
            homoscedastic = True
    elif homoscedastic is None:
        homoscedastic = bool(np.all(var == var[0]))
    covs = var.reshape(g, 1, 1)
    return MixtureParams(g=g, weights=weights, means=means, covariances=covs,
                         homoscedastic=homoscedastic)


@dataclass(frozen=True)
class PartialDataset:
    """Feature rows with partially hidden class labels.

    Ground-truth labels are always stored (simulation studies score
    against them) but estimators must access labels only through
    :meth:`observed_label` / :meth:`observed_onehot`, which hide the
    label wherever ``missing`` is set.

    Attributes:
        g: number of classes the labels range over.
        features: (n, p) matrix of observations.
        labels: (n,) ground-truth class labels in ``{1..g}``.
            Evaluation only -- never read this from an estimator.
        missing: (n,) indicators; 1 means the label is hidden.
    """

    g: int
    features: NDArray[np.float64]
    labels: NDArray[np.int64]
    missing: NDArray[np.int64]

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        missing = np.asarray(self.missing, dtype=np.int64).reshape(-1)
        n = feats.shape[0]
        if labels.shape != (n,) or missing.shape != (n,):
            raise InvalidParameterError(
                f"labels/missing must have length n={n}, got "
                f"{labels.shape} and {missing.shape}"
            )
        if n == 0:
            raise InvalidParameterError("dataset must contain at least one row")
        g = int(self.g)
        if np.any(labels < 1) or np.any(labels > g):
            bad = labels[(labels < 1) | (labels > g)][0]
            raise InvalidParameterError(f"label {bad} outside {{1..{g}}}")
        if np.any((missing != 0) & (missing != 1)):
            raise InvalidParameterError("missing indicators must be 0 or 1")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "features", _readonly(feats))
        fl = labels.copy(); fl.flags.writeable = False
        fm = missing.copy(); fm.flags.writeable = False
        object.__setattr__(self, "labels", fl)
        object.__setattr__(self, "missing", fm)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def labelled_mask(self) -> np.ndarray:
        """Boolean mask of rows whose label is visible to estimators."""
        return self.missing == 0

    @property
    def n_labelled(self) -> int:
        return int(np.sum(self.missing == 0))

    def observed_label(self, j: int) -> int | None:
        """The label of row ``j`` if observed, else None."""
        if self.missing[j]:
            return None
        return int(self.labels[j])

    def observed_labels_array(self, fill: int = 1) -> np.ndarray:
        """Vector form of :meth:`observed_label`: hidden entries are
        replaced by ``fill``, so estimators can never see them."""
        return np.where(self.missing == 0, self.labels, np.int64(fill))

    def observed_onehot(self) -> np.ndarray:
        """(n, g) one-hot responsibility matrix for labelled rows;
        all-zero rows where the label is hidden."""
        onehot = np.zeros((self.n, self.g))
        obs = self.missing == 0
        onehot[np.nonzero(obs)[0], self.labels[obs] - 1] = 1.0
        return onehot

    def reveal_all(self) -> "PartialDataset":
        """A copy with every label made visible (complete-data baseline)."""
        return PartialDataset(g=self.g, features=self.features,
                              labels=self.labels,
                              missing=np.zeros(self.n, dtype=np.int64))


@dataclass(frozen=True)
class PosteriorRow:
    """Posterior class probabilities at one point plus their entropy."""

    tau: NDArray[np.float64]
    entropy: float

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float).reshape(-1)
        if abs(float(tau.sum()) - 1.0) > 1e-12:
            raise InvalidParameterError(f"tau must sum to 1 within 1e-12: {tau}")
        if np.any(tau < 0.0) or np.any(tau > 1.0):
            raise InvalidParameterError(f"tau entries must lie in [0, 1]: {tau}")
        g = tau.shape[0]
        ent = float(self.entropy)
        if not (-1e-15 <= ent <= np.log(g) + 1e-12):
            raise InvalidParameterError(
                f"entropy {ent!r} outside [0, log g = {np.log(g)!r}]"
            )
        object.__setattr__(self, "tau", _readonly(tau))
        object.__setattr__(self, "entropy", max(ent, 0.0))


# ---------------------------------------------------------------------------
# batch kernels (internal): everything vectorized over rows
# ---------------------------------------------------------------------------

def component_loglik_matrix(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """(n, g) matrix of log f_i(y_j) using precomputed Cholesky factors."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, p = Y.shape
    if p == 1:
        diff = Y - params.means[:, 0]                     # (n, g) broadcast
        quad = diff * diff / params.covariances[:, 0, 0]
        return -0.5 * (_LOG_2PI + params._logdets + quad)
    out = np.empty((n, params.g))
    for i in range(params.g):
        v = (Y - params.means[i]) @ params._chol_invs[i].T
        out[:, i] = -0.5 * (p * _LOG_2PI + params._logdets[i] + np.sum(v * v, axis=1))
    return out


def log_joint_matrix(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """(n, g) matrix of log pi_i + log f_i(y_j)."""
    return component_loglik_matrix(Y, params) + params.log_weights()


def posterior_matrix(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """(n, g) posterior responsibilities, normalized in log space."""
    h = log_joint_matrix(Y, params)
    h -= h.max(axis=1, keepdims=True)
    tau = np.exp(h)
    tau /= tau.sum(axis=1, keepdims=True)
    return tau


def entropy_vector(tau: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy (nats) with 0 log 0 := 0."""
    tau = np.atleast_2d(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(tau > 0.0, tau * np.log(tau), 0.0)
    return -terms.sum(axis=1)


def discriminant_vector(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """Two-class homoscedastic LDA log-posterior-odds for each row."""
    if params.g != 2:
        raise UnsupportedConfigError(
            f"discriminant requires exactly 2 components, got g={params.g}"
        )
    if not params.homoscedastic:
        raise UnsupportedConfigError("discriminant requires a shared covariance")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    L = params._chols[0]
    delta = params.means[0] - params.means[1]
    mid = 0.5 * (params.means[0] + params.means[1])
    # Sigma^{-1} delta via two triangular solves
    a = solve_triangular(L.T, solve_triangular(L, delta, lower=True), lower=False)
    prior = float(np.log(params.weights[0]) - np.log(params.weights[1]))
    return prior + (Y - mid) @ a


# ---------------------------------------------------------------------------
# public per-point operations
# ---------------------------------------------------------------------------

def component_logpdf(y: ArrayLike, mean: ArrayLike, cov: ArrayLike) -> float:
    """log N(y; mean, cov) for a single point.

    Raises:
        NonSPDCovarianceError: if ``cov`` has an eigenvalue below 1e-10,
            naming the offending eigenvalue.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    sym = _check_spd(cov)
    p = y.shape[0]
    L = cholesky(sym, lower=True)
    v = solve_triangular(L, y - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * (p * _LOG_2PI + logdet + v @ v))


def posterior_tau(y: ArrayLike, params: MixtureParams) -> PosteriorRow:
    """Posterior class probabilities tau_i(y) with their entropy."""
    tau = posterior_matrix(np.asarray(y, dtype=float).reshape(1, -1), params)[0]
    return PosteriorRow(tau=tau, entropy=float(entropy_vector(tau)[0]))


def entropy(tau: ArrayLike) -> float:
    """Shannon entropy (nats) of a probability vector, with 0 log 0 := 0.

    Raises:
        ContractViolationError: on a negative entry or if the vector does
            not sum to 1 within 1e-9.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if np.any(tau < 0.0):
        bad = int(np.argmax(tau < 0.0))
        raise ContractViolationError(
            f"probability vector has negative entry {tau[bad]!r} at index {bad}"
        )
    if abs(float(tau.sum()) - 1.0) > 1e-9:
        raise ContractViolationError(
            f"probability vector must sum to 1 within 1e-9, got {tau.sum()!r}"
        )
    return float(entropy_vector(tau)[0])


def discriminant(y: ArrayLike, params: MixtureParams) -> float:
    """Two-class log-posterior-odds b(y) = log tau_1(y) / tau_2(y).

    For a homoscedastic pair this is the linear statistic
    ``log(pi_1/pi_2) + (mu_1 - mu_2)' Sigma^{-1} (y - (mu_1 + mu_2)/2)``.

    Raises:
        UnsupportedConfigError: unless g = 2 and the covariance is shared.
    """
    return float(discriminant_vector(np.asarray(y, dtype=float).reshape(1, -1), params)[0])
