"""Monte-Carlo Fisher-information estimates and the three-term
decomposition check.

All information matrices live over the free mixture coordinates of
:class:`~missmix.coords.FreeCoordinates` (weight logit(s), mean entries,
log-Cholesky covariance entries); mechanism parameters xi are held fixed
and are not part of the coordinates.

Estimated quantities, all as averages of score outer products over one
seeded draw stream:

    CC       complete-data rows (y, z)
    CC_CLR   conditional score of z given y (logistic-regression part)
    UC       marginal-of-y scores
    PC_FULL  (y, z, m) from the joint model with the mechanism, z masked
             where m = 1, full-likelihood scores
    PC_MISS  defined by difference: PC_FULL - [(1-gamma) CC + gamma UC],
             gamma being the empirical missing fraction of the stream

Because PC_MISS is built by difference, the residual of
``PC_FULL - [CC - gamma CC_CLR + PC_MISS]`` collapses to
``gamma (CC_CLR + UC - CC)``, i.e. the Monte-Carlo discrepancy of the
unlabelled-information identity; :func:`check_decomposition` reports it
with per-entry z-scores.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .coords import FreeCoordinates, h_gradient_tensor, score_batch
from .errors import (
    ContractViolationError,
    InvalidParameterError,
    NonFiniteGradientError,
    UnsupportedConfigError,
)
from .mechanisms import MechanismSpec, miss_prob_matrix
from .mixture import MixtureParams
from .rng import substream


class InfoKind(enum.Enum):
    CC = "CC"
    CC_CLR = "CC_CLR"
    UC = "UC"
    PC_FULL = "PC_FULL"
    PC_MISS = "PC_MISS"


def free_coordinates(params: MixtureParams) -> FreeCoordinates:
    """The coordinate system information matrices are expressed in."""
    return FreeCoordinates(params.g, params.p, params.homoscedastic)


def score_theta(row: tuple, params: MixtureParams,
                spec: MechanismSpec | None = None,
                kind: str = "auto") -> np.ndarray:
    """Score of one row's log-likelihood contribution in free coordinates.

    ``row`` is ``(y, label_or_None, m)``. ``kind`` selects the
    conditioning: "complete", "marginal", "conditional", "full" (needs
    ``spec``), or "auto" = complete when the label is observed, marginal
    otherwise.

    Raises:
        NonFiniteGradientError: naming the first bad coordinate.
    """
    y, label, m = row
    coords = free_coordinates(params)
    if kind == "auto" and spec is not None:
        kind = "full"
    labels = None if label is None else np.asarray([label])
    if labels is None and kind in ("complete", "conditional"):
        raise ContractViolationError(f"'{kind}' score needs an observed label")
    if labels is None:
        labels = np.asarray([1])  # never read: row is unlabelled
    s = score_batch(np.asarray(y, dtype=float).reshape(1, -1), labels,
                    np.asarray([m]), params, coords, spec=spec, kind=kind)[0]
    bad = ~np.isfinite(s)
    if np.any(bad):
        raise NonFiniteGradientError(int(np.argmax(bad)))
    return s


@dataclass(frozen=True)
class InfoEstimate:
    """One estimated information matrix with per-entry MC standard errors."""

    kind: InfoKind
    matrix: NDArray[np.float64]
    mc_se: NDArray[np.float64]
    gamma: float
    n_mc: int


@dataclass(frozen=True)
class InfoDecomposition:
    """All five information matrices over the free theta coordinates.

    The four directly estimated matrices (CC, UC, CC_CLR, PC_FULL) are
    averages of outer products, hence PSD up to round-off, and are
    validated as such. PC_MISS is a difference of estimates: under a
    non-informative mechanism it is mean-zero Monte-Carlo noise and can
    carry small negative eigenvalues, so only symmetry is enforced there.
    """

    i_cc: NDArray[np.float64]
    i_uc: NDArray[np.float64]
    i_cc_clr: NDArray[np.float64]
    i_pc_full: NDArray[np.float64]
    i_pc_miss: NDArray[np.float64]
    gamma: float
    n_mc: int
    mc_se: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameterError(f"gamma must be in [0, 1]: {self.gamma}")
        for name in ("i_cc", "i_uc", "i_cc_clr", "i_pc_full", "i_pc_miss"):
            M = getattr(self, name)
            asym = float(np.max(np.abs(M - M.T)))
            if asym > 1e-8:
                raise InvalidParameterError(f"{name} asymmetric by {asym:.3e}")
        for name in ("i_cc", "i_uc", "i_cc_clr", "i_pc_full"):
            M = getattr(self, name)
            lo = float(np.linalg.eigvalsh(M)[0])
            if lo < -1e-6:
                raise InvalidParameterError(
                    f"{name} has eigenvalue {lo:.3e} below the -1e-6 PSD slack"
                )


@dataclass(frozen=True)
class DecompositionReport:
    """Internal-consistency report for the three-term decomposition.

    The mechanism's information about theta flows entirely through the
    discriminant function b(y; theta), so PC_MISS is structurally
    singular over the ambient coordinates: its ambient smallest
    eigenvalue is zero by construction. Positive definiteness of the
    mechanism's contribution is therefore reported on the
    discriminant-coefficient subspace (``pc_miss_sub_*``), alongside the
    ambient figure for transparency.
    """

    decomposition: InfoDecomposition
    residuals: NDArray[np.float64]
    residual_se: NDArray[np.float64]
    z_scores: NDArray[np.float64]
    max_abs_z: float
    pc_miss_min_eig: float
    pc_miss_min_eig_se: float
    pc_miss_sub_min_eig: float
    pc_miss_sub_min_eig_se: float
    subspace_dim: int


def discriminant_subspace(params: MixtureParams) -> np.ndarray:
    """Orthonormal basis (d x (p+1)) of the span of grad_theta b(y) over y.

    b(y; theta) is affine in y, so gradients at p+1 generic points span
    the whole subspace. Requires g = 2 with a shared covariance.
    """
    if params.g != 2 or not params.homoscedastic:
        raise UnsupportedConfigError(
            "discriminant subspace requires g = 2 homoscedastic")
    coords = free_coordinates(params)
    pts = np.vstack([np.zeros((1, params.p)), np.eye(params.p)])
    G = h_gradient_tensor(pts, params, coords)
    B = G[:, 0, :] - G[:, 1, :]
    U, s, _ = np.linalg.svd(B.T, full_matrices=False)
    return U[:, s > 1e-10 * max(1.0, float(s.max()))]


# ---------------------------------------------------------------------------
# draw stream and score matrices
# ---------------------------------------------------------------------------

def _draw_stream(params: MixtureParams, spec: MechanismSpec | None,
                 n_mc: int, seed: int):
    """One seeded draw of (Y, Z, M); M all-zero when no mechanism given."""
    rng = substream(seed, "info", "draw")
    Z = rng.choice(params.g, size=n_mc, p=params.weights) + 1
    E = rng.standard_normal((n_mc, params.p))
    Y = np.empty_like(E)
    for i in range(params.g):
        rows = Z == i + 1
        Y[rows] = params.means[i] + E[rows] @ params._chols[i].T
    if spec is None:
        M = np.zeros(n_mc, dtype=np.int64)
    else:
        P = miss_prob_matrix(Y, spec, params)[np.arange(n_mc), Z - 1]
        M = (substream(seed, "info", "miss").random(n_mc) < P).astype(np.int64)
    return Y, Z, M


def _score_matrices(params, spec, n_mc, seed, kinds):
    coords = free_coordinates(params)
    need_mech = any(k in kinds for k in ("full",))
    Y, Z, M = _draw_stream(params, spec if need_mech else None, n_mc, seed)
    zeros = np.zeros(n_mc, dtype=np.int64)
    out = {}
    for kind in kinds:
        missing = M if kind == "full" else zeros
        out[kind] = score_batch(Y, Z, missing, params, coords,
                                spec=spec if kind == "full" else None, kind=kind)
    gamma = float(M.mean())
    return out, gamma


def _outer_moments(parts):
    """Mean and per-entry MC standard error of the per-draw matrix
    ``sum_k coef_k * outer(S_k[j])`` without materializing (n, d, d).

    Entry (a, b) per draw is a sum of products S_k[j, a] S_k[j, b]; both
    the first and second moments reduce to Gram matrices of elementwise
    products of score columns.
    """
    n = parts[0][1].shape[0]
    mean = np.zeros((parts[0][1].shape[1],) * 2)
    for coef, S in parts:
        mean += coef * (S.T @ S)
    mean /= n
    meansq = np.zeros_like(mean)
    for coef_a, A in parts:
        for coef_b, B in parts:
            AB = A * B
            meansq += (coef_a * coef_b) * (AB.T @ AB)
    meansq /= n
    var = np.maximum(meansq - mean ** 2, 0.0) * (n / max(n - 1, 1))
    se = np.sqrt(var / n)
    mean = 0.5 * (mean + mean.T)
    se = 0.5 * (se + se.T)
    return mean, se


def estimate_info(kind: InfoKind | str, params: MixtureParams,
                  spec: MechanismSpec | None, n_mc: int, seed: int) -> InfoEstimate:
    """Monte-Carlo estimate of one information matrix.

    All kinds share the identical draw stream for a given seed, so
    fragments estimated separately stay mutually consistent.
    """
    kind = InfoKind(kind)
    if n_mc < 1000:
        raise ContractViolationError(f"n_mc must be >= 1000, got {n_mc}")
    if kind in (InfoKind.PC_FULL, InfoKind.PC_MISS) and spec is None:
        raise ContractViolationError(f"{kind.value} requires a mechanism spec")
    base = {InfoKind.CC: "complete", InfoKind.CC_CLR: "conditional",
            InfoKind.UC: "marginal"}
    if kind in base:
        S, _ = _score_matrices(params, spec, n_mc, seed, [base[kind]])
        mean, se = _outer_moments([(1.0, S[base[kind]])])
        return InfoEstimate(kind, mean, se, 0.0 if spec is None else _gamma_only(
            params, spec, n_mc, seed), n_mc)
    if kind is InfoKind.PC_FULL:
        S, gamma = _score_matrices(params, spec, n_mc, seed, ["full"])
        mean, se = _outer_moments([(1.0, S["full"])])
        return InfoEstimate(kind, mean, se, gamma, n_mc)
    S, gamma = _score_matrices(params, spec, n_mc, seed,
                               ["full", "complete", "marginal"])
    mean, se = _outer_moments([
        (1.0, S["full"]),
        (-(1.0 - gamma), S["complete"]),
        (-gamma, S["marginal"]),
    ])
    return InfoEstimate(kind, mean, se, gamma, n_mc)


def _gamma_only(params, spec, n_mc, seed) -> float:
    _, _, M = _draw_stream(params, spec, n_mc, seed)
    return float(M.mean())


def estimate_decomposition(params: MixtureParams, spec: MechanismSpec,
                           n_mc: int, seed: int) -> InfoDecomposition:
    """All five matrices on one shared draw stream."""
    if n_mc < 1000:
        raise ContractViolationError(f"n_mc must be >= 1000, got {n_mc}")
    kinds = ["complete", "conditional", "marginal", "full"]
    S, gamma = _score_matrices(params, spec, n_mc, seed, kinds)
    cc, cc_se = _outer_moments([(1.0, S["complete"])])
    clr, clr_se = _outer_moments([(1.0, S["conditional"])])
    uc, uc_se = _outer_moments([(1.0, S["marginal"])])
    full, full_se = _outer_moments([(1.0, S["full"])])
    miss, miss_se = _outer_moments([
        (1.0, S["full"]),
        (-(1.0 - gamma), S["complete"]),
        (-gamma, S["marginal"]),
    ])
    return InfoDecomposition(
        i_cc=cc, i_uc=uc, i_cc_clr=clr, i_pc_full=full, i_pc_miss=miss,
        gamma=gamma, n_mc=n_mc,
        mc_se={"i_cc": cc_se, "i_uc": uc_se, "i_cc_clr": clr_se,
               "i_pc_full": full_se, "i_pc_miss": miss_se},
    )


def check_decomposition(params: MixtureParams, spec: MechanismSpec,
                        n_mc: int, seed: int) -> DecompositionReport:
    """Residuals of the three-term identity with per-entry z-scores, plus
    a delta-method confidence figure for the smallest PC_MISS eigenvalue.
    """
    if n_mc < 1000:
        raise ContractViolationError(f"n_mc must be >= 1000, got {n_mc}")
    kinds = ["complete", "conditional", "marginal", "full"]
    S, gamma = _score_matrices(params, spec, n_mc, seed, kinds)
    cc, cc_se = _outer_moments([(1.0, S["complete"])])
    clr, clr_se = _outer_moments([(1.0, S["conditional"])])
    uc, uc_se = _outer_moments([(1.0, S["marginal"])])
    full, full_se = _outer_moments([(1.0, S["full"])])
    miss_parts = [
        (1.0, S["full"]),
        (-(1.0 - gamma), S["complete"]),
        (-gamma, S["marginal"]),
    ]
    miss, miss_se = _outer_moments(miss_parts)
    decomp = InfoDecomposition(
        i_cc=cc, i_uc=uc, i_cc_clr=clr, i_pc_full=full, i_pc_miss=miss,
        gamma=gamma, n_mc=n_mc,
        mc_se={"i_cc": cc_se, "i_uc": uc_se, "i_cc_clr": clr_se,
               "i_pc_full": full_se, "i_pc_miss": miss_se},
    )
    resid_parts = [
        (gamma, S["conditional"]),
        (gamma, S["marginal"]),
        (-gamma, S["complete"]),
    ]
    resid, resid_se = _outer_moments(resid_parts)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(resid_se > 0.0, resid / resid_se, 0.0)

    def min_eig_with_se(M, lift=None):
        # delta method: the eigenvalue's per-draw quadratic form v' D_j v
        vals, vecs = np.linalg.eigh(M)
        v = vecs[:, 0] if lift is None else lift @ vecs[:, 0]
        q = np.zeros(n_mc)
        for coef, Smat in miss_parts:
            q += coef * (Smat @ v) ** 2
        return float(vals[0]), float(np.std(q, ddof=1) / np.sqrt(n_mc))

    amb_eig, amb_se = min_eig_with_se(miss)
    try:
        U = discriminant_subspace(params)
        sub_eig, sub_se = min_eig_with_se(U.T @ miss @ U, lift=U)
        sub_dim = U.shape[1]
    except UnsupportedConfigError:
        sub_eig, sub_se, sub_dim = float("nan"), float("nan"), 0
    return DecompositionReport(
        decomposition=decomp,
        residuals=resid,
        residual_se=resid_se,
        z_scores=z,
        max_abs_z=float(np.max(np.abs(z))),
        pc_miss_min_eig=amb_eig,
        pc_miss_min_eig_se=amb_se,
        pc_miss_sub_min_eig=sub_eig,
        pc_miss_sub_min_eig_se=sub_se,
        subspace_dim=sub_dim,
    )
