"""Mixture of bilinear factor analyzers over matrix observations.

Each component models X = M + A Y_l + Y_r B' + noise terms, where the left
loading A (n x q) compresses the row dimension and the right loading B (p x r)
compresses the column dimension. Marginally a component is matrix normal with
row scale diag(row_noise) + A A' and column scale diag(col_noise) + B B', so
everything here reduces to the structured matrix normal in ``matnorm``.

Responsibilities are computed in log space and labeled observations override
them with exact one-hot rows. All functions are pure; per-observation work is
independent across observations and vectorized over the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matnorm
from .dataio import DataSet3D
from .errors import DegeneracyError, InputError
from .matnorm import LOG_2PI, MatNormParams, StructuredScale

__all__ = [
    "ComponentParams",
    "MixtureParams",
    "LatentMoments",
    "component_log_density",
    "responsibilities",
    "latent_moments",
    "map_classify",
]


@dataclass(frozen=True)
class ComponentParams:
    """Weight and parameters of one mixture component.

    Fields: mixing ``weight``; ``mean`` (n, p); ``left_loading`` (n, q);
    ``right_loading`` (p, r); diagonal noise variances ``row_noise`` (n,) and
    ``col_noise`` (p,). The two marginal structured scales and the density
    normalizing constant are derived once at construction.
    """

    weight: float
    mean: np.ndarray
    left_loading: np.ndarray
    right_loading: np.ndarray
    row_noise: np.ndarray
    col_noise: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise InputError(f"component weight must lie in (0, 1], got {self.weight!r}")
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 2:
            raise InputError(f"mean must be a matrix, got shape {mean.shape}")
        n, p = mean.shape
        row_scale = StructuredScale(self.row_noise, self.left_loading)
        col_scale = StructuredScale(self.col_noise, self.right_loading)
        if row_scale.dim != n or col_scale.dim != p:
            raise InputError("noise vectors inconsistent with mean shape")
        if row_scale.rank >= n:
            raise InputError(f"need q < n, got q={row_scale.rank}, n={n}")
        if col_scale.rank >= p:
            raise InputError(f"need r < p, got r={col_scale.rank}, p={p}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "left_loading", row_scale.loading)
        object.__setattr__(self, "right_loading", col_scale.loading)
        object.__setattr__(self, "row_noise", row_scale.diag)
        object.__setattr__(self, "col_noise", col_scale.diag)
        object.__setattr__(self, "_row_scale", row_scale)
        object.__setattr__(self, "_col_scale", col_scale)
        log_const = -0.5 * (n * p * LOG_2PI + p * row_scale.log_det + n * col_scale.log_det)
        object.__setattr__(self, "_log_const", log_const)

    @property
    def row_scale(self) -> StructuredScale:
        return self._row_scale

    @property
    def col_scale(self) -> StructuredScale:
        return self._col_scale

    @property
    def log_const(self) -> float:
        return self._log_const

    @property
    def dims(self) -> tuple[int, int, int, int]:
        n, p = self.mean.shape
        return n, p, self.row_scale.rank, self.col_scale.rank

    @property
    def matnorm_params(self) -> MatNormParams:
        return MatNormParams(self.mean, self.row_scale, self.col_scale)


@dataclass(frozen=True)
class MixtureParams:
    """An ordered collection of components with weights summing to one."""

    components: tuple[ComponentParams, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InputError("mixture needs at least one component")
        dims = comps[0].dims[:2]
        for c in comps[1:]:
            if c.dims[:2] != dims:
                raise InputError("components disagree on observation shape")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise InputError(f"component weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", comps)

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def shape(self) -> tuple[int, int]:
        return self.components[0].dims[:2]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])


@dataclass(frozen=True)
class LatentMoments:
    """Conditional moments of the two latent blocks given one observation.

    ``left_mean`` (q, p) and ``left_scatter`` (q, q) describe the latent that
    multiplies the left loading; ``right_mean`` (n, r) and ``right_scatter``
    (r, r) the latent that multiplies the right loading. The scatters are the
    conditional expectations of the latent quadratic forms that the CM-steps
    consume, so left_scatter - left_mean inv(col_scale) left_mean' stays
    positive semidefinite (and analogously on the right).
    """

    left_mean: np.ndarray
    left_scatter: np.ndarray
    right_mean: np.ndarray
    right_scatter: np.ndarray


def component_log_density(x: np.ndarray, comp: ComponentParams) -> np.ndarray | float:
    """Marginal matrix normal log-density of observations under one component."""
    return matnorm.log_density(x, comp.matnorm_params)


def latent_moments(x: np.ndarray, comp: ComponentParams) -> LatentMoments:
    """Conditional latent moments for a single observation matrix."""
    x = np.asarray(x, dtype=np.float64)
    n, p, q, r = comp.dims
    if x.shape != (n, p):
        raise InputError(f"observation shape {x.shape} does not match ({n}, {p})")
    resid = x - comp.mean
    rs, cs = comp.row_scale, comp.col_scale
    left_mean = rs.solve_inner(comp.left_loading.T @ (resid * rs.inv_diag[:, None]))
    left_scatter = p * rs.w_inv + left_mean @ cs.inv_apply(left_mean.T)
    right_mean = cs.solve_inner(((resid * cs.inv_diag[None, :]) @ comp.right_loading).T).T
    right_scatter = n * cs.w_inv + right_mean.T @ rs.inv_apply(right_mean)
    return LatentMoments(left_mean, left_scatter, right_mean, right_scatter)


def map_classify(resp: np.ndarray) -> np.ndarray:
    """Labels 1..G from a responsibility matrix; ties go to the smaller label."""
    resp = np.asarray(resp)
    if resp.ndim != 2 or resp.shape[1] < 1:
        raise InputError(f"responsibility matrix must be (N, G), got {resp.shape}")
    return np.argmax(resp, axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# batched internals shared with the fitting engine

class ObsCache:
    """Both memory layouts of a dataset plus label bookkeeping.

    Layouts: ``rows`` is (N, n, p) C-contiguous, ``cols`` the transposed
    (N, p, n) copy, so both left- and right-sided products run as single
    large matrix multiplies. The arrays never change during a fit.
    """

    __slots__ = ("rows", "cols", "labels", "labeled_idx", "labeled_g", "N", "n", "p")

    def __init__(self, data: DataSet3D):
        self.rows = np.ascontiguousarray(data.obs)
        self.cols = np.ascontiguousarray(data.obs.transpose(0, 2, 1))
        self.N, self.n, self.p = data.obs.shape
        if data.labels is None:
            self.labels = np.zeros(self.N, dtype=np.int64)
        else:
            self.labels = data.labels
        self.labeled_idx = np.flatnonzero(self.labels > 0)
        self.labeled_g = self.labels[self.labeled_idx] - 1

    def check_labels(self, G: int) -> None:
        if self.labeled_idx.size and self.labels.max() > G:
            raise InputError(
                f"label {int(self.labels.max())} exceeds component count {G}"
            )


def log_joint_matrix(cache: ObsCache, params: MixtureParams) -> np.ndarray:
    """(N, G) matrix of log(weight_g) + log-density of each observation."""
    out = np.empty((cache.N, params.G))
    for g, comp in enumerate(params.components):
        r_rows = cache.rows - comp.mean
        quad = matnorm._quad_batch(r_rows, comp.row_scale, comp.col_scale)
        out[:, g] = np.log(comp.weight) + comp.log_const - 0.5 * quad
    return out


def resp_from_log_joint(cache: ObsCache, log_joint: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize a log-joint matrix into responsibilities.

    Returns the (N, G) responsibility matrix and the observed log-likelihood,
    in which labeled observations contribute their own component's log-joint
    term while unlabeled ones contribute the log-sum over components.
    """
    if np.isnan(log_joint).any():
        bad = int(np.argwhere(np.isnan(log_joint).any(axis=1))[0, 0])
        raise DegeneracyError(f"density is NaN for observation {bad}")
    top = log_joint.max(axis=1)
    norm = top + np.log(np.exp(log_joint - top[:, None]).sum(axis=1))
    resp = np.exp(log_joint - norm[:, None])
    contrib = norm
    idx = cache.labeled_idx
    if idx.size:
        resp[idx] = 0.0
        resp[idx, cache.labeled_g] = 1.0
        contrib = norm.copy()
        contrib[idx] = log_joint[idx, cache.labeled_g]
    return resp, float(contrib.sum())


def responsibilities(data: DataSet3D, params: MixtureParams) -> np.ndarray:
    """Posterior component probabilities for every observation.

    Labeled observations (label > 0) get exact one-hot rows.
    """
    cache = ObsCache(data)
    cache.check_labels(params.G)
    if data.shape != params.shape:
        raise InputError(
            f"data shape {data.shape} does not match model shape {params.shape}"
        )
    resp, _ = resp_from_log_joint(cache, log_joint_matrix(cache, params))
    return resp
