"""Probability models for the label-missingness indicator.

Three families:

* ``MCAR`` -- a constant missingness rate, logit xi_0.
* ``MAR_ENTROPY`` -- logistic in the posterior entropy of the point,
  logit = xi_0 + xi_1 * e(y; theta). Ambiguous points near the decision
  boundary go unlabelled more often when xi_1 > 0.
* ``MNAR_CLASS`` -- a separate logistic per class in the two-class
  discriminant, logit = xi_{i,0} + xi_{i,1} * b(y). Missingness that
  depends on the (possibly unobserved) class label itself.

MAR/MNAR probabilities depend on the current mixture parameters through
the entropy / discriminant features, so every evaluation takes theta.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .errors import ContractViolationError, InvalidParameterError, MechanismStepError
from .mixture import (
    MixtureParams,
    discriminant_vector,
    entropy_vector,
    posterior_matrix,
)

PROB_CLAMP = 1e-12
_LOG_CLAMP = float(np.log(PROB_CLAMP))


class MechanismFamily(enum.Enum):
    MCAR = "MCAR"
    MAR_ENTROPY = "MAR_ENTROPY"
    MNAR_CLASS = "MNAR_CLASS"

    @property
    def xi_len(self) -> int:
        return {"MCAR": 1, "MAR_ENTROPY": 2, "MNAR_CLASS": 4}[self.value]


@dataclass(frozen=True)
class MechanismSpec:
    """A missingness family together with its parameter vector xi.

    xi layout: MCAR ``(xi0,)``; MAR_ENTROPY ``(xi0, xi1)`` acting on
    ``(1, entropy)``; MNAR_CLASS ``(xi_{1,0}, xi_{1,1}, xi_{2,0}, xi_{2,1})``
    acting per class on ``(1, discriminant)``.
    """

    family: MechanismFamily
    xi: NDArray[np.float64]

    def __post_init__(self):
        family = MechanismFamily(self.family)
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.shape[0] != family.xi_len:
            raise InvalidParameterError(
                f"{family.value} needs {family.xi_len} xi entries, got {xi.shape[0]}"
            )
        if not np.all(np.isfinite(xi)):
            raise InvalidParameterError(f"xi entries must be finite: {xi}")
        xi = xi.copy()
        xi.flags.writeable = False
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "xi", xi)


def _clamp(p: np.ndarray | float):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


# ---------------------------------------------------------------------------
# feature and probability kernels (batch, internal)
# ---------------------------------------------------------------------------

def mar_features(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """Posterior entropy e(y; theta) per row."""
    return entropy_vector(posterior_matrix(Y, params))

def mnar_features(Y: np.ndarray, params: MixtureParams) -> np.ndarray:
    """Discriminant b(y) per row (g = 2 homoscedastic only)."""
    return discriminant_vector(Y, params)


def miss_logits_per_class(Y: np.ndarray, spec: MechanismSpec,
                          params: MixtureParams) -> np.ndarray:
    """(n, g) matrix of logit Pr(M=1 | Z=i, y_j).

    Class-free families repeat one column; this uniform shape is what the
    EM engine mixes over.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    g = params.g
    xi = spec.xi
    if spec.family is MechanismFamily.MCAR:
        return np.full((n, g), xi[0])
    if spec.family is MechanismFamily.MAR_ENTROPY:
        eta = xi[0] + xi[1] * mar_features(Y, params)
        return np.repeat(eta[:, None], g, axis=1)
    b = mnar_features(Y, params)
    intercepts = xi[0::2]  # (g,)
    slopes = xi[1::2]
    return intercepts[None, :] + b[:, None] * slopes[None, :]


def miss_prob_matrix(Y: np.ndarray, spec: MechanismSpec,
                     params: MixtureParams) -> np.ndarray:
    """(n, g) clamped matrix of Pr(M=1 | Z=i, y_j)."""
    return _clamp(expit(miss_logits_per_class(Y, spec, params)))


def log_miss_prob_per_class(Y: np.ndarray, missing: np.ndarray,
                            spec: MechanismSpec, params: MixtureParams) -> np.ndarray:
    """(n, g) matrix of log Pr(M_j = m_j | Z=i, y_j), clamped below.

    Stable for large |logit|: log sigma(eta) = -softplus(-eta).
    """
    eta = miss_logits_per_class(Y, spec, params)
    m = np.asarray(missing, dtype=float).reshape(-1, 1)
    signed = np.where(m == 1.0, eta, -eta)
    return np.maximum(-np.logaddexp(0.0, -signed), _LOG_CLAMP)


# ---------------------------------------------------------------------------
# public per-row operations
# ---------------------------------------------------------------------------

def miss_prob(y: ArrayLike, label: int | None, spec: MechanismSpec,
              params: MixtureParams) -> float:
    """Pr(M = 1 | ...) for one point, clamped to [1e-12, 1 - 1e-12].

    ``label`` (1-based class) is required by MNAR_CLASS and ignored by the
    class-free families.
    """
    Y = np.asarray(y, dtype=float).reshape(1, -1)
    if spec.family is MechanismFamily.MNAR_CLASS:
        if label is None:
            raise ContractViolationError(
                "MNAR_CLASS missingness is class-conditional: a class label is required"
            )
        if not 1 <= label <= params.g:
            raise ContractViolationError(f"label {label} outside {{1..{params.g}}}")
        return float(miss_prob_matrix(Y, spec, params)[0, label - 1])
    return float(miss_prob_matrix(Y, spec, params)[0, 0])


def mechanism_loglik(row: tuple, spec: MechanismSpec,
                     params: MixtureParams) -> float:
    """Log-likelihood contribution of one row's missingness indicator.

    ``row`` is ``(y, label_or_None, m)``. For labelled rows this is
    log(1 - Pr(M=1 | ...)); for unlabelled rows log Pr(M=1 | ...). The
    scalar form is undefined for an unlabelled row under MNAR_CLASS
    (the class is unknown); use :func:`mechanism_loglik_per_class` and
    mix over the class posterior instead.
    """
    y, label, m = row
    Y = np.asarray(y, dtype=float).reshape(1, -1)
    if spec.family is MechanismFamily.MNAR_CLASS:
        if m == 1:
            raise ContractViolationError(
                "scalar mechanism log-likelihood is undefined for an unlabelled "
                "row under MNAR_CLASS; mix the per-class vector instead"
            )
        if label is None:
            raise ContractViolationError("labelled row (m=0) must carry its label")
    logs = log_miss_prob_per_class(Y, np.asarray([m]), spec, params)[0]
    if spec.family is MechanismFamily.MNAR_CLASS:
        return float(logs[label - 1])
    return float(logs[0])


def mechanism_loglik_per_class(y: ArrayLike, m: int, spec: MechanismSpec,
                               params: MixtureParams) -> np.ndarray:
    """Vector of log Pr(M = m | Z = i, y) over classes i = 1..g.

    Constant across classes for MCAR / MAR_ENTROPY.
    """
    Y = np.asarray(y, dtype=float).reshape(1, -1)
    return log_miss_prob_per_class(Y, np.asarray([m]), spec, params)[0]


def mechanism_grad_xi(row: tuple, spec: MechanismSpec, params: MixtureParams,
                      weights: ArrayLike | None = None) -> np.ndarray:
    """Exact gradient in xi of one row's mechanism log-likelihood.

    For an unlabelled row under MNAR_CLASS the row's contribution is the
    responsibility-weighted expected complete-data version, so ``weights``
    (the class responsibilities) must be supplied -- and only then.
    Entropy / discriminant features are treated as fixed covariates
    (theta held constant).
    """
    y, label, m = row
    Y = np.asarray(y, dtype=float).reshape(1, -1)
    mnar = spec.family is MechanismFamily.MNAR_CLASS
    unlabelled = m == 1
    if mnar and unlabelled:
        if weights is None:
            raise ContractViolationError(
                "unlabelled MNAR_CLASS rows need class responsibilities as weights"
            )
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.shape[0] != params.g:
            raise ContractViolationError(
                f"weights length {weights.shape[0]} != g = {params.g}"
            )
    elif weights is not None:
        raise ContractViolationError(
            "weights are only meaningful for unlabelled MNAR_CLASS rows"
        )

    eta = miss_logits_per_class(Y, spec, params)[0]  # (g,)
    p_mat = expit(eta)
    # gradient of the *clamped* log-likelihood: zero where the relevant
    # log-probability sits at the clamp floor
    signed = eta if m == 1 else -eta
    active = -np.logaddexp(0.0, -signed) > _LOG_CLAMP
    resid = (float(m) - p_mat) * active

    if spec.family is MechanismFamily.MCAR:
        return np.array([resid[0]])
    if spec.family is MechanismFamily.MAR_ENTROPY:
        e = float(mar_features(Y, params)[0])
        return resid[0] * np.array([1.0, e])
    b = float(mnar_features(Y, params)[0])
    u = np.array([1.0, b])
    grad = np.zeros(4)
    if unlabelled:
        for i in range(params.g):
            grad[2 * i : 2 * i + 2] = weights[i] * resid[i] * u
    else:
        if label is None:
            raise ContractViolationError("labelled row (m=0) must carry its label")
        i = label - 1
        grad[2 * i : 2 * i + 2] = resid[i] * u
    return grad


# ---------------------------------------------------------------------------
# weighted logistic Newton step (used by the EM engine's xi update)
# ---------------------------------------------------------------------------

def _xi_objective(xi: np.ndarray, family: MechanismFamily, feats: np.ndarray | None,
                  resp: np.ndarray, missing: np.ndarray):
    """Expected mechanism log-likelihood with gradient and Hessian.

    ``resp`` is the (n, g) responsibility matrix (one-hot on labelled
    rows); ``feats`` the per-row scalar feature (entropy or discriminant),
    None for MCAR. Features are fixed covariates here.
    """
    n = resp.shape[0]
    m = np.asarray(missing, dtype=float)

    def pieces(eta):
        # clamped logs plus the mask where the active branch is unclamped
        raw_p = -np.logaddexp(0.0, -eta)
        raw_1mp = -np.logaddexp(0.0, eta)
        active = np.where(m == 1.0, raw_p, raw_1mp) > _LOG_CLAMP
        return (np.maximum(raw_p, _LOG_CLAMP), np.maximum(raw_1mp, _LOG_CLAMP),
                active)

    if family is MechanismFamily.MNAR_CLASS:
        g = resp.shape[1]
        U = np.column_stack([np.ones(n), feats])  # (n, 2)
        value = 0.0
        grad = np.zeros(2 * g)
        hess = np.zeros((2 * g, 2 * g))
        for i in range(g):
            eta = U @ xi[2 * i : 2 * i + 2]
            p = expit(eta)
            logp, log1p_, active = pieces(eta)
            w = resp[:, i]
            value += float(w @ (m * logp + (1.0 - m) * log1p_))
            r = w * (m - p) * active
            grad[2 * i : 2 * i + 2] = r @ U
            s = w * p * (1.0 - p) * active
            hess[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = -(U * s[:, None]).T @ U
        return value, grad, hess
    if family is MechanismFamily.MCAR:
        U = np.ones((n, 1))
    else:
        U = np.column_stack([np.ones(n), feats])
    eta = U @ xi
    p = expit(eta)
    logp, log1p_, active = pieces(eta)
    value = float(np.sum(m * logp + (1.0 - m) * log1p_))
    grad = ((m - p) * active) @ U
    s = p * (1.0 - p) * active
    hess = -(U * s[:, None]).T @ U
    return value, grad, hess


def newton_update_xi(xi: np.ndarray, family: MechanismFamily,
                     feats: np.ndarray | None, resp: np.ndarray,
                     missing: np.ndarray, max_newton: int = 25,
                     grad_tol: float = 1e-10) -> np.ndarray:
    """Maximize the expected mechanism log-likelihood in xi by damped Newton.

    The objective is concave given responsibilities and fixed features, so
    plain Newton with step halving converges in a handful of iterations.

    Raises:
        MechanismStepError: if a step still descends after 30 halvings.
    """
    xi = np.asarray(xi, dtype=float).copy()
    value, grad, hess = _xi_objective(xi, family, feats, resp, missing)
    for _ in range(max_newton):
        if np.max(np.abs(grad)) < grad_tol:
            break
        # tiny ridge keeps the solve well-posed under separation
        step = np.linalg.solve(hess - 1e-10 * np.eye(hess.shape[0]), grad)
        lam = 1.0
        for _half in range(31):
            cand = xi - lam * step
            cand_value, cand_grad, cand_hess = _xi_objective(
                cand, family, feats, resp, missing)
            if cand_value >= value - 1e-12:
                break
            lam *= 0.5
        else:
            raise MechanismStepError(xi)
        improved = cand_value > value
        xi, value, grad, hess = cand, cand_value, cand_grad, cand_hess
        if not improved:
            break
    return xi
