"""Three-stage alternating ECM fitting for the bilinear factor mixture.

One cycle refreshes responsibilities before each of three conditional
maximization stages: (1) weights and means, (2) left loadings and row noise,
(3) right loadings and column noise. The loadings stages condition on the
moments of their latent block, computed against the freshest parameters.
Observed log-likelihood comes for free from the normalizer of each cycle's
first E-step, and the run stops once the Aitken-accelerated estimate of the
likelihood asymptote is within ``eps`` above the latest value.

Starts are cheap short runs from random initializations; the best burn-in
survivor continues to convergence (the em-EM strategy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataio import DataSet3D
from .errors import DegeneracyError, EmptyComponentError, FitError, InputError
from .matnorm import VARIANCE_FLOOR, StructuredScale
from .model import (
    ComponentParams,
    MixtureParams,
    ObsCache,
    log_joint_matrix,
    resp_from_log_joint,
)

__all__ = [
    "FitConfig",
    "ConvergenceState",
    "FitResult",
    "AitkenDecision",
    "min_component_mass",
    "observed_log_lik",
    "random_init",
    "stage1_update",
    "stage2_update",
    "stage3_update",
    "aitken_decision",
    "fit_once",
    "fit_multi_start",
]


def min_component_mass(q: int, r: int) -> int:
    """Smallest responsibility mass a component may hold without aborting."""
    return max(q, r, 1) + 1


@dataclass(frozen=True)
class FitConfig:
    """Model size and fitting strategy for one mixture fit.

    ``eps_rel`` scales the stopping tolerance: the continuation run stops when
    the Aitken asymptote estimate exceeds the current log-likelihood by less
    than eps_rel * |log-likelihood after burn-in|.
    """

    G: int
    q: int
    r: int
    n_starts: int = 10
    burn_iters: int = 10
    max_iters: int = 1000
    eps_rel: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.G < 1:
            raise InputError(f"G must be >= 1, got {self.G}")
        if self.q < 0 or self.r < 0:
            raise InputError("factor counts must be >= 0")
        if self.n_starts < 1:
            raise InputError("n_starts must be >= 1")
        if self.burn_iters < 0 or self.max_iters < 1:
            raise InputError("iteration limits out of range")
        if not self.eps_rel > 0:
            raise InputError("eps_rel must be positive")


@dataclass(frozen=True)
class ConvergenceState:
    """Log-likelihood trace plus the Aitken quantities at the final decision."""

    loglik_trace: np.ndarray
    accel: float
    asymptote: float


@dataclass(frozen=True)
class AitkenDecision:
    stop: bool
    accel: float
    asymptote: float


@dataclass(frozen=True)
class FitResult:
    """Outcome of one fit: final parameters, responsibilities, and diagnostics."""

    params: MixtureParams
    resp: np.ndarray
    conv: ConvergenceState
    log_lik: float
    converged: bool
    iterations: int
    start_failures: tuple[str, ...] = ()


def observed_log_lik(data: DataSet3D, params: MixtureParams) -> float:
    """Observed log-likelihood; labeled rows contribute only their own component."""
    cache = ObsCache(data)
    cache.check_labels(params.G)
    _, ll = resp_from_log_joint(cache, log_joint_matrix(cache, params))
    return ll


def aitken_decision(trace, eps: float) -> AitkenDecision:
    """Stopping decision from the last three trace entries.

    With consecutive values (l0, l1, l2) the acceleration is
    a = (l2 - l1)/(l1 - l0) and the asymptote estimate
    l_inf = l1 + (l2 - l1)/(1 - a); the run stops when
    0 < l_inf - l2 < eps. A flat denominator is a plateau at machine
    precision and stops immediately.
    """
    if len(trace) < 3:
        return AitkenDecision(False, math.nan, math.nan)
    l0, l1, l2 = float(trace[-3]), float(trace[-2]), float(trace[-1])
    d1 = l1 - l0
    d2 = l2 - l1
    if d1 == 0.0:
        return AitkenDecision(True, math.nan, l2)
    accel = d2 / d1
    if accel == 1.0:
        return AitkenDecision(False, accel, math.inf)
    asymptote = l1 + d2 / (1.0 - accel)
    gap = asymptote - l2
    return AitkenDecision(0.0 < gap < eps, accel, asymptote)


# ---------------------------------------------------------------------------
# conditional maximization stages

def _stage1(cache: ObsCache, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    mass = resp.sum(axis=0)
    floor_mass = min_component_mass(*params.components[0].dims[2:])
    for g, m in enumerate(mass):
        if m < floor_mass:
            raise EmptyComponentError(
                f"component {g + 1} holds mass {m:.3f} < {floor_mass}"
            )
    weights = mass / mass.sum()
    comps = []
    for g, comp in enumerate(params.components):
        mean = np.tensordot(resp[:, g], cache.rows, axes=(0, 0)) / mass[g]
        comps.append(replace(comp, weight=float(weights[g]), mean=mean))
    return MixtureParams(tuple(comps))


def _spd_solve(lhs: np.ndarray, rhs_t: np.ndarray, what: str) -> np.ndarray:
    """Solve lhs @ X' = rhs_t for symmetric positive definite lhs."""
    try:
        return cho_solve(cho_factor((lhs + lhs.T) / 2.0, lower=True), rhs_t).T
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(f"singular latent scatter in {what}: {exc}") from exc


def _weighted_scatter(resid_t: np.ndarray, z: np.ndarray,
                      scale: StructuredScale) -> np.ndarray:
    """sum_i z_i R_i' inv(scale) R_i for stacked residuals R_i = resid_t[i]'.

    ``resid_t`` has shape (N, dim, m) with dim = scale.dim acting on the
    middle axis; the result is (m, m). The diagonal part of the inverse
    collapses to one big weighted Gram product and the low-rank correction
    to a small projected one.
    """
    N, dim, m = resid_t.shape
    flat = resid_t.reshape(-1, m)
    w = np.multiply.outer(z, scale.inv_diag).reshape(-1, 1)
    scat = flat.T @ (flat * w)
    if scale.rank:
        proj = np.matmul(scale.inv_factor.T, resid_t)      # (N, k, m)
        scat -= np.tensordot(proj * z[:, None, None], proj, axes=([0, 1], [0, 1]))
    return scat


def _loading_noise(scat: np.ndarray, own_scale: StructuredScale, mass: float,
                   other_dim: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Loading and noise update of one side given that side's weighted scatter.

    ``scat`` aggregates residual cross-products against the opposite side's
    inverse scale, so the latent regression reduces to solving a k x k system:
    the latent first moments are proj' R with proj = inv(own_scale) @ loading,
    and every sum over observations folds into ``scat``.
    """
    if own_scale.rank == 0:
        loading = np.zeros((own_scale.dim, 0))
        noise = np.diag(scat) / (mass * other_dim)
    else:
        proj = own_scale._dinv_loading @ own_scale.w_inv
        cross = scat @ proj
        inner = other_dim * mass * own_scale.w_inv + proj.T @ cross
        loading = _spd_solve(inner, cross.T, what)
        noise = (np.diag(scat) - (loading * cross).sum(axis=1)) / (mass * other_dim)
    return loading, np.maximum(noise, VARIANCE_FLOOR)


def _stage2(cache: ObsCache, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    """Update every component's left loading and row noise variances."""
    comps = []
    for g, comp in enumerate(params.components):
        z = resp[:, g]
        resid_t = cache.cols - comp.mean.T                 # (N, p, n)
        scat = _weighted_scatter(resid_t, z, comp.col_scale)
        loading, noise = _loading_noise(scat, comp.row_scale, z.sum(),
                                        comp.dims[1], "left-loading update")
        comps.append(replace(comp, left_loading=loading, row_noise=noise))
    return MixtureParams(tuple(comps))


def _stage3(cache: ObsCache, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    """Update every component's right loading and column noise variances."""
    comps = []
    for g, comp in enumerate(params.components):
        z = resp[:, g]
        resid = cache.rows - comp.mean                     # (N, n, p)
        scat = _weighted_scatter(resid, z, comp.row_scale)
        loading, noise = _loading_noise(scat, comp.col_scale, z.sum(),
                                        comp.dims[0], "right-loading update")
        comps.append(replace(comp, right_loading=loading, col_noise=noise))
    return MixtureParams(tuple(comps))


def stage1_update(data: DataSet3D, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    """Weighted-mean update of mixing weights and locations."""
    return _stage1(ObsCache(data), params, _check_resp(data, params, resp))


def stage2_update(data: DataSet3D, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    """Left-loading and row-noise update (locations already refreshed)."""
    return _stage2(ObsCache(data), params, _check_resp(data, params, resp))


def stage3_update(data: DataSet3D, params: MixtureParams, resp: np.ndarray) -> MixtureParams:
    """Right-loading and column-noise update (earlier stages already applied)."""
    return _stage3(ObsCache(data), params, _check_resp(data, params, resp))


def _check_resp(data: DataSet3D, params: MixtureParams, resp) -> np.ndarray:
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape != (data.size, params.G):
        raise InputError(
            f"responsibilities must have shape ({data.size}, {params.G}), got {resp.shape}"
        )
    return resp


# ---------------------------------------------------------------------------
# initialization

def random_init(data: DataSet3D, G: int, q: int, r: int, rng,
                *, cache: ObsCache | None = None) -> MixtureParams:
    """Random starting point: flat Dirichlet responsibilities (one-hot where
    labeled) feed one weighted-mean pass; loadings are small random matrices
    and noise variances come from residual second moments."""
    cache = cache or ObsCache(data)
    N, n, p = cache.N, cache.n, cache.p
    resp = rng.dirichlet(np.ones(G), size=N)
    if cache.labeled_idx.size:
        if cache.labels.max() > G:
            raise InputError(f"label {int(cache.labels.max())} exceeds G={G}")
        resp[cache.labeled_idx] = 0.0
        resp[cache.labeled_idx, cache.labeled_g] = 1.0
    mass = resp.sum(axis=0)
    floor_mass = min_component_mass(q, r)
    if (mass < floor_mass).any():
        raise EmptyComponentError("initial responsibilities leave a component empty")
    spread = float(cache.rows.std())
    comps = []
    for g in range(G):
        z = resp[:, g]
        mean = np.tensordot(z, cache.rows, axes=(0, 0)) / mass[g]
        left = 0.1 * spread * rng.standard_normal((n, q))
        right = 0.1 * spread * rng.standard_normal((p, r))
        sq = np.einsum("i,ijl->jl", z, (cache.rows - mean) ** 2) / mass[g]
        row_var = sq.mean(axis=1)
        col_var = sq.mean(axis=0) / max(sq.mean(), VARIANCE_FLOOR)
        comps.append(ComponentParams(
            weight=float(mass[g] / mass.sum()),
            mean=mean,
            left_loading=left,
            right_loading=right,
            row_noise=np.maximum(row_var, VARIANCE_FLOOR),
            col_noise=np.maximum(col_var, VARIANCE_FLOOR),
        ))
    return MixtureParams(tuple(comps))


# ---------------------------------------------------------------------------
# drivers

def fit_once(data: DataSet3D, config: FitConfig, init: MixtureParams, *,
             eps: float | None = None, max_iters: int | None = None,
             prior_trace=(), cache: ObsCache | None = None) -> FitResult:
    """Run AECM cycles from ``init`` until the Aitken rule or the cycle cap.

    ``eps`` defaults to eps_rel * |first trace entry|. ``prior_trace`` seeds
    the trace with history from an earlier run (the final history entry must
    correspond to ``init`` being current). Responsibilities in the result are
    consistent with the returned parameters.
    """
    cache = cache or ObsCache(data)
    if (cache.n, cache.p) != init.shape:
        raise InputError(f"data shape {(cache.n, cache.p)} != model shape {init.shape}")
    if init.G != config.G:
        raise InputError(f"init has {init.G} components, config expects {config.G}")
    _check_factor_counts(config, cache.n, cache.p)
    cache.check_labels(config.G)
    cap = config.max_iters if max_iters is None else max_iters
    trace = [float(v) for v in prior_trace]
    params = init
    cycles = 0
    while True:
        resp, ll = resp_from_log_joint(cache, log_joint_matrix(cache, params))
        trace.append(ll)
        tol = config.eps_rel * abs(trace[0]) if eps is None else eps
        decision = aitken_decision(trace, tol)
        if decision.stop:
            converged = True
            break
        if cycles >= cap:
            converged = False
            break
        params = _stage1(cache, params, resp)
        resp2, _ = resp_from_log_joint(cache, log_joint_matrix(cache, params))
        params = _stage2(cache, params, resp2)
        resp3, _ = resp_from_log_joint(cache, log_joint_matrix(cache, params))
        params = _stage3(cache, params, resp3)
        cycles += 1
    conv = ConvergenceState(np.array(trace), decision.accel, decision.asymptote)
    return FitResult(params=params, resp=resp, conv=conv, log_lik=ll,
                     converged=converged, iterations=cycles)


def fit_multi_start(data: DataSet3D, config: FitConfig) -> FitResult:
    """Short burn-in runs from ``n_starts`` random inits; the best survivor
    continues to convergence. Start failures are recorded on the result, and
    every start failing raises FitError."""
    cache = ObsCache(data)
    _check_factor_counts(config, cache.n, cache.p)
    cache.check_labels(config.G)
    root = np.random.SeedSequence(config.seed & 0xFFFFFFFFFFFFFFFF)
    failures: list[str] = []
    burns: list[tuple[int, FitResult]] = []
    for s, child in enumerate(root.spawn(config.n_starts)):
        rng = np.random.default_rng(child)
        try:
            init = random_init(data, config.G, config.q, config.r, rng, cache=cache)
            res = fit_once(data, config, init, eps=0.0,
                           max_iters=config.burn_iters, cache=cache)
        except DegeneracyError as exc:
            failures.append(f"start {s}: {exc}")
            continue
        burns.append((s, res))
    if not burns:
        raise FitError("every start failed: " + "; ".join(failures))
    burns.sort(key=lambda sr: -sr[1].log_lik)
    for s, cand in burns:
        eps = config.eps_rel * abs(cand.log_lik)
        remaining = max(0, config.max_iters - cand.iterations)
        # drop the final trace entry: the continuation's first E-step
        # reproduces it exactly
        prior = list(cand.conv.loglik_trace[:-1])
        try:
            final = fit_once(data, config, cand.params, eps=eps,
                             max_iters=remaining, prior_trace=prior, cache=cache)
        except DegeneracyError as exc:
            failures.append(f"continuation of start {s}: {exc}")
            continue
        return replace(final, iterations=cand.iterations + final.iterations,
                       start_failures=tuple(failures))
    raise FitError("every start failed: " + "; ".join(failures))


def _check_factor_counts(config: FitConfig, n: int, p: int) -> None:
    if config.q >= n:
        raise InputError(f"need q < n, got q={config.q}, n={n}")
    if config.r >= p:
        raise InputError(f"need r < p, got r={config.r}, p={p}")
