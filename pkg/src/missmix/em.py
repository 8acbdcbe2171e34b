"""Likelihood evaluation and fitting.

Two fitters:

* :func:`fit_ignorable` -- plain EM on the ignorable likelihood (labelled
  rows enter through their class term, unlabelled rows through the
  mixture marginal).
* :func:`fit_full` -- generalized EM on the full likelihood that includes
  the missingness indicators. The mixture update and a gradient
  refinement of theta (needed because the MAR/MNAR mechanism depends on
  theta through its entropy/discriminant feature) and the Newton update
  of xi are each accepted only if the full log-likelihood does not
  decrease, with step halving toward the previous iterate otherwise, so
  every recorded trace is nondecreasing.

Both fitters are deterministic given (data, options): all randomness
flows through labelled substreams of ``options.seed``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .coords import FreeCoordinates, full_value_and_grad
from .errors import (
    ContractViolationError,
    DegenerateComponentError,
    InvalidParameterError,
    UnsupportedConfigError,
)
from .mechanisms import (
    MechanismFamily,
    MechanismSpec,
    log_miss_prob_per_class,
    mar_features,
    mnar_features,
    newton_update_xi,
)
from .mixture import (
    MixtureParams,
    PartialDataset,
    log_joint_matrix,
    posterior_matrix,
)
from .rng import substream


class InitStrategy(enum.Enum):
    LABELLED_MLE = "LABELLED_MLE"
    RANDOM_RESPONSIBILITIES = "RANDOM_RESPONSIBILITIES"


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_restarts: int = 5
    seed: int = 0
    init_strategy: InitStrategy = InitStrategy.LABELLED_MLE
    ridge: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidParameterError("rel_tol must be > 0")
        if self.n_restarts < 1:
            raise InvalidParameterError("n_restarts must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidParameterError("seed must fit in 64 unsigned bits")
        if not self.ridge >= 1e-10:
            raise InvalidParameterError("ridge must be >= 1e-10 (the SPD floor)")
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))


@dataclass(frozen=True)
class FitResult:
    theta_hat: MixtureParams
    xi_hat: MechanismSpec | None
    loglik_trace: NDArray[np.float64]
    converged: bool
    restart_index: int
    n_iter: int

    def __post_init__(self):
        trace = np.asarray(self.loglik_trace, dtype=float)
        steps = np.diff(trace)
        if steps.size and float(steps.min()) < -1e-9:
            raise InvalidParameterError(
                f"log-likelihood trace decreased by {-steps.min():.3e} (> 1e-9)"
            )
        trace = trace.copy()
        trace.flags.writeable = False
        object.__setattr__(self, "loglik_trace", trace)


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------

def _check_dims(data: PartialDataset, params: MixtureParams):
    if data.g != params.g:
        raise ContractViolationError(f"dataset has g={data.g}, params g={params.g}")
    if data.p != params.p:
        raise ContractViolationError(f"dataset has p={data.p}, params p={params.p}")


def _row_logsumexp(H: np.ndarray) -> np.ndarray:
    m = H.max(axis=1)
    return m + np.log(np.exp(H - m[:, None]).sum(axis=1))


def log_lik_ignorable(data: PartialDataset, params: MixtureParams) -> float:
    """Observed-data log-likelihood that ignores the missingness model.

    Labelled rows contribute log[pi_z f_z(y)]; unlabelled rows the
    mixture marginal log sum_i pi_i f_i(y). With no labels missing this
    is the supervised likelihood; with all labels missing the clustering
    likelihood.
    """
    _check_dims(data, params)
    H = log_joint_matrix(data.features, params)
    obs = data.labelled_mask
    lab = data.observed_labels_array()
    total = 0.0
    if np.any(obs):
        rows = np.nonzero(obs)[0]
        total += float(H[rows, lab[rows] - 1].sum())
    if np.any(~obs):
        total += float(_row_logsumexp(H[~obs]).sum())
    return total


def log_lik_full(data: PartialDataset, params: MixtureParams,
                 spec: MechanismSpec) -> float:
    """Full log-likelihood including the missingness indicators.

    Labelled rows add log(1 - Pr(M=1 | ...)); unlabelled rows mix
    Pr(M=1 | Z=i, y) into the class sum (the factor is class-free and
    factors out under MCAR/MAR).
    """
    _check_dims(data, params)
    H = log_joint_matrix(data.features, params)
    Lm = log_miss_prob_per_class(data.features, data.missing, spec, params)
    obs = data.labelled_mask
    lab = data.observed_labels_array()
    total = 0.0
    if np.any(obs):
        rows = np.nonzero(obs)[0]
        cols = lab[rows] - 1
        total += float((H[rows, cols] + Lm[rows, cols]).sum())
    if np.any(~obs):
        total += float(_row_logsumexp(H[~obs] + Lm[~obs]).sum())
    return total


# ---------------------------------------------------------------------------
# E and M steps
# ---------------------------------------------------------------------------

def _estep_ignorable(data: PartialDataset, params: MixtureParams) -> np.ndarray:
    R = data.observed_onehot()
    unobs = ~data.labelled_mask
    if np.any(unobs):
        R[unobs] = posterior_matrix(data.features[unobs], params)
    return R


def _estep_full(data: PartialDataset, params: MixtureParams,
                spec: MechanismSpec) -> np.ndarray:
    R = data.observed_onehot()
    unobs = ~data.labelled_mask
    if np.any(unobs):
        Y = data.features[unobs]
        H = log_joint_matrix(Y, params)
        H += log_miss_prob_per_class(Y, np.ones(Y.shape[0], dtype=np.int64),
                                     spec, params)
        H -= H.max(axis=1, keepdims=True)
        tau = np.exp(H)
        tau /= tau.sum(axis=1, keepdims=True)
        R[unobs] = tau
    return R


def _floor_spd(S: np.ndarray, floor: float) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals = np.linalg.eigvalsh(S)
    if vals[0] >= floor:
        return S
    vals, vecs = np.linalg.eigh(S)
    vals = np.maximum(vals, floor)
    return 0.5 * ((vecs * vals) @ vecs.T + ((vecs * vals) @ vecs.T).T)


def _m_step(Y: np.ndarray, R: np.ndarray, homoscedastic: bool,
            ridge: float) -> MixtureParams:
    n, p = Y.shape
    g = R.shape[1]
    totals = R.sum(axis=0)
    low = int(np.argmin(totals))
    if totals[low] < 1e-8:
        raise DegenerateComponentError(low, float(totals[low]))
    weights = totals / n
    weights = weights / weights.sum()  # exact renormalization
    means = (R.T @ Y) / totals[:, None]
    covs = np.empty((g, p, p))
    if homoscedastic:
        pooled = np.zeros((p, p))
        for i in range(g):
            diff = Y - means[i]
            pooled += (diff * R[:, i : i + 1]).T @ diff
        shared = _floor_spd(pooled / n, ridge)
        covs[:] = shared
    else:
        for i in range(g):
            diff = Y - means[i]
            covs[i] = _floor_spd(((diff * R[:, i : i + 1]).T @ diff) / totals[i], ridge)
    return MixtureParams(g=g, weights=weights, means=means, covariances=covs,
                         homoscedastic=homoscedastic)


def supervised_mle(data: PartialDataset, homoscedastic: bool = False,
                   ridge: float = 1e-6) -> MixtureParams:
    """Closed-form MLE from fully labelled rows (class frequencies, class
    means, per-class or pooled scatter)."""
    if data.n_labelled != data.n:
        raise ContractViolationError(
            f"supervised MLE needs every label observed ({data.n - data.n_labelled} hidden)"
        )
    return _m_step(data.features, data.observed_onehot(), homoscedastic, ridge)


# ---------------------------------------------------------------------------
# initialization, canonical order
# ---------------------------------------------------------------------------

def _labelled_mle_qualifies(data: PartialDataset) -> bool:
    obs = data.labelled_mask
    if not np.any(obs):
        return False
    counts = np.bincount(data.labels[obs] - 1, minlength=data.g)
    return bool(np.all(counts >= data.p + 1))


def _init_params(data: PartialDataset, opts: FitOptions, homoscedastic: bool,
                 restart: int) -> MixtureParams:
    use_labelled = (
        restart == 0
        and opts.init_strategy is InitStrategy.LABELLED_MLE
        and _labelled_mle_qualifies(data)
    )
    if use_labelled:
        obs = data.labelled_mask
        sub = PartialDataset(g=data.g, features=data.features[obs],
                             labels=data.labels[obs],
                             missing=np.zeros(int(obs.sum()), dtype=np.int64))
        return supervised_mle(sub, homoscedastic=homoscedastic, ridge=opts.ridge)
    rng = substream(opts.seed, "restart", restart)
    R = data.observed_onehot()
    unobs = ~data.labelled_mask
    if np.any(unobs):
        R[unobs] = rng.dirichlet(np.ones(data.g), size=int(unobs.sum()))
    return _m_step(data.features, R, homoscedastic, opts.ridge)


def canonicalize(params: MixtureParams, spec: MechanismSpec | None = None):
    """Sort components by first mean coordinate (ties: weight descending).

    Only meaningful when component order is a symmetry of the problem,
    i.e. when no observed label pins the identities. MNAR mechanism
    parameters are permuted along with the components; swapping the two
    classes flips the sign of the discriminant, so MNAR slopes negate.

    Returns the (params, spec) pair; inputs are returned unchanged when
    already canonical.
    """
    order = np.lexsort((-params.weights, params.means[:, 0]))
    if np.array_equal(order, np.arange(params.g)):
        return params, spec
    out = MixtureParams(
        g=params.g,
        weights=params.weights[order],
        means=params.means[order],
        covariances=params.covariances[order],
        homoscedastic=params.homoscedastic,
    )
    if spec is not None and spec.family is MechanismFamily.MNAR_CLASS:
        xi = spec.xi
        blocks = [np.array([xi[2 * i], -xi[2 * i + 1]]) for i in order]
        spec = MechanismSpec(spec.family, np.concatenate(blocks))
    return out, spec


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(new), 1e-300)


# ---------------------------------------------------------------------------
# ignorable EM
# ---------------------------------------------------------------------------

def _em_loop_ignorable(data: PartialDataset, params: MixtureParams,
                       opts: FitOptions, homoscedastic: bool):
    Y = data.features
    trace: list[float] = []
    converged = False
    for _ in range(opts.max_iter):
        R = _estep_ignorable(data, params)
        params = _m_step(Y, R, homoscedastic, opts.ridge)
        ll = log_lik_ignorable(data, params)
        trace.append(ll)
        if len(trace) >= 2 and _rel_change(trace[-1], trace[-2]) < opts.rel_tol:
            converged = True
            break
    return params, trace, converged


def fit_ignorable(data: PartialDataset, opts: FitOptions = FitOptions(), *,
                  homoscedastic: bool = False) -> FitResult:
    """Best-of-restarts EM for the ignorable likelihood.

    Restart 0 starts from the labelled-rows MLE when the strategy allows
    and every class has at least p+1 labelled rows; later restarts (and
    non-qualifying data) start from Dirichlet(1) random responsibilities
    drawn from the restart's own substream of ``opts.seed``. A collapsed
    component aborts its restart; the best surviving restart wins, ties
    going to the lowest index.
    """
    results = []
    last_error: DegenerateComponentError | None = None
    for r in range(opts.n_restarts):
        try:
            params0 = _init_params(data, opts, homoscedastic, r)
            params, trace, converged = _em_loop_ignorable(data, params0, opts,
                                                          homoscedastic)
            results.append((r, params, trace, converged))
        except DegenerateComponentError as err:
            last_error = err
    if not results:
        assert last_error is not None
        raise last_error
    finals = np.array([t[-1] for _, _, t, _ in results])
    r, params, trace, converged = results[int(np.argmax(finals))]
    if data.n_labelled == 0:
        params, _ = canonicalize(params)
    return FitResult(theta_hat=params, xi_hat=None,
                     loglik_trace=np.asarray(trace), converged=converged,
                     restart_index=r, n_iter=len(trace))


# ---------------------------------------------------------------------------
# full-likelihood generalized EM
# ---------------------------------------------------------------------------

def _blend_params(old: MixtureParams, new: MixtureParams, lam: float) -> MixtureParams:
    w = lam * new.weights + (1.0 - lam) * old.weights
    return MixtureParams(
        g=old.g,
        weights=w / w.sum(),
        means=lam * new.means + (1.0 - lam) * old.means,
        covariances=lam * new.covariances + (1.0 - lam) * old.covariances,
        homoscedastic=old.homoscedastic,
    )


def _accept_theta(data, spec, params, cand, ll):
    """Accept ``cand`` (damped toward ``params`` as needed) if the full
    log-likelihood does not decrease; otherwise keep ``params``.

    Twelve halvings reach lambda ~ 2e-4; any still-descending direction
    past that contributes nothing and the gradient/polish steps take over.
    """
    lam = 1.0
    for _ in range(12):
        trial = cand if lam == 1.0 else _blend_params(params, cand, lam)
        trial_ll = log_lik_full(data, trial, spec)
        if trial_ll >= ll - 1e-12:
            return (trial, trial_ll) if trial_ll >= ll else (params, ll)
        lam *= 0.5
    return params, ll


def _mechanism_features(family: MechanismFamily, data: PartialDataset,
                        params: MixtureParams):
    if family is MechanismFamily.MCAR:
        return None
    if family is MechanismFamily.MAR_ENTROPY:
        return mar_features(data.features, params)
    return mnar_features(data.features, params)


def _joint_polish(data: PartialDataset, family: MechanismFamily,
                  params: MixtureParams, spec: MechanismSpec, ll: float,
                  coords: FreeCoordinates):
    """Ascent polish of (theta, xi) jointly with L-BFGS on the full
    log-likelihood, using the exact analytic scores. Returns the inputs
    unchanged unless the polished point is strictly better, so the GEM
    trace stays monotone."""
    d = coords.dim
    labels = data.observed_labels_array()
    x0 = np.concatenate([coords.pack(params), spec.xi])

    def negobj(x):
        try:
            pp = coords.unpack(x[:d])
            sp = MechanismSpec(family, x[d:])
        except (InvalidParameterError, np.linalg.LinAlgError):
            return 1e15, np.zeros_like(x)
        value, gtheta, gxi = full_value_and_grad(
            data.features, labels, data.missing, pp, sp, coords)
        g = np.concatenate([gtheta, gxi])
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            return 1e15, np.zeros_like(x)
        return -value, -g

    res = minimize(negobj, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 80, "maxfun": 120})
    if not np.all(np.isfinite(res.x)) or -res.fun <= ll:
        return params, spec, ll
    try:
        pp = coords.unpack(res.x[:d])
        sp = MechanismSpec(family, res.x[d:])
    except (InvalidParameterError, np.linalg.LinAlgError):
        return params, spec, ll
    return pp, sp, float(log_lik_full(data, pp, sp))


def _init_xi(family: MechanismFamily, data: PartialDataset) -> np.ndarray:
    rate = float(np.clip(np.mean(data.missing), 1e-6, 1.0 - 1e-6))
    intercept = float(np.log(rate / (1.0 - rate)))
    if family is MechanismFamily.MCAR:
        return np.array([intercept])
    if family is MechanismFamily.MAR_ENTROPY:
        return np.array([intercept, 0.0])
    return np.array([intercept, 0.0, intercept, 0.0])


def _gem_loop_full(data: PartialDataset, family: MechanismFamily,
                   params: MixtureParams, opts: FitOptions, homoscedastic: bool):
    coords = FreeCoordinates(data.g, data.p, homoscedastic)
    theta_feels_mechanism = family is not MechanismFamily.MCAR
    spec = MechanismSpec(family, _init_xi(family, data))
    ll = log_lik_full(data, params, spec)
    trace: list[float] = []
    converged = False
    # The EM cycle alone has the ignorable fixed points when the mechanism
    # depends on theta, so once it slows below stall_tol the joint
    # L-BFGS polish takes over; cycles resume while polishing still helps.
    stall_tol = max(opts.rel_tol, 1e-4)
    polish_exhausted = False
    iters = 0
    while iters < opts.max_iter:
        iters += 1
        R = _estep_full(data, params, spec)
        cand = _m_step(data.features, R, homoscedastic, opts.ridge)
        params, ll = _accept_theta(data, spec, params, cand, ll)
        feats = _mechanism_features(family, data, params)
        R = _estep_full(data, params, spec)
        xi_cand = newton_update_xi(spec.xi, family, feats, R, data.missing,
                                   max_newton=4)
        lam = 1.0
        for _half in range(31):
            trial = MechanismSpec(family, lam * xi_cand + (1.0 - lam) * spec.xi)
            trial_ll = log_lik_full(data, params, trial)
            if trial_ll >= ll - 1e-12:
                if trial_ll >= ll:
                    spec, ll = trial, trial_ll
                break
            lam *= 0.5
        trace.append(ll)
        if len(trace) < 2:
            continue
        rel = _rel_change(trace[-1], trace[-2])
        if rel >= stall_tol:
            polish_exhausted = False
            continue
        if not theta_feels_mechanism or polish_exhausted:
            if rel < opts.rel_tol:
                converged = True
                break
            continue
        params, spec, new_ll = _joint_polish(data, family, params, spec, ll,
                                             coords)
        gained = new_ll - ll
        ll = new_ll
        trace.append(ll)
        iters += 1
        if gained <= opts.rel_tol * max(abs(ll), 1.0):
            polish_exhausted = True
            if rel < opts.rel_tol:
                converged = True
                break
    return params, spec, trace, converged


def fit_full(data: PartialDataset, family: MechanismFamily,
             opts: FitOptions = FitOptions(), *,
             homoscedastic: bool = False) -> FitResult:
    """Joint maximum likelihood for (theta, xi) under the given
    missingness family, by ascent-checked generalized EM.

    MNAR_CLASS requires g = 2 and a shared covariance (the discriminant
    feature is only defined there). The trace records the full
    log-likelihood after every outer cycle and never decreases.
    """
    family = MechanismFamily(family)
    if family is MechanismFamily.MNAR_CLASS:
        if data.g != 2 or not homoscedastic:
            raise UnsupportedConfigError(
                "MNAR_CLASS fitting requires g = 2 and homoscedastic = True"
            )
    results = []
    last_error: DegenerateComponentError | None = None
    for r in range(opts.n_restarts):
        try:
            params0 = _init_params(data, opts, homoscedastic, r)
            params, spec, trace, converged = _gem_loop_full(
                data, family, params0, opts, homoscedastic)
            results.append((r, params, spec, trace, converged))
        except DegenerateComponentError as err:
            last_error = err
    if not results:
        assert last_error is not None
        raise last_error
    finals = np.array([t[-1] for _, _, _, t, _ in results])
    r, params, spec, trace, converged = results[int(np.argmax(finals))]
    if data.n_labelled == 0:
        params, spec = canonicalize(params, spec)
    return FitResult(theta_hat=params, xi_hat=spec,
                     loglik_trace=np.asarray(trace), converged=converged,
                     restart_index=r, n_iter=len(trace))
