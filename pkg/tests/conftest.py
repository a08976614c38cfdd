"""Shared helpers: dense linear-algebra oracles and random instance builders.

Every oracle here recomputes its target quantity through an independent route
(dense inverses, scipy distributions, explicit summation) so test expectations
never come from the code under test.
"""

import numpy as np
import pytest
import scipy.stats

from mvbfa.matnorm import MatNormParams, StructuredScale
from mvbfa.model import ComponentParams, MixtureParams


def rng_for(*words):
    return np.random.default_rng(np.random.SeedSequence(list(words)))


def random_scale(rng, dim, rank, floor=0.05):
    diag = floor + rng.random(dim)
    loading = rng.standard_normal((dim, rank))
    return StructuredScale(diag, loading)


def random_matnorm(rng, n, p, q, r):
    mean = rng.standard_normal((n, p))
    return MatNormParams(mean, random_scale(rng, n, q), random_scale(rng, p, r))


def random_component(rng, n, p, q, r, weight=1.0):
    return ComponentParams(
        weight=weight,
        mean=rng.standard_normal((n, p)),
        left_loading=rng.standard_normal((n, q)),
        right_loading=rng.standard_normal((p, r)),
        row_noise=0.05 + rng.random(n),
        col_noise=0.05 + rng.random(p),
    )


def random_mixture(rng, G, n, p, q, r, spread=4.0):
    w = rng.dirichlet(np.full(G, 5.0))
    comps = []
    for g in range(G):
        c = random_component(rng, n, p, q, r, weight=float(w[g]))
        comps.append(
            ComponentParams(c.weight, c.mean + spread * rng.standard_normal((n, p)),
                            c.left_loading, c.right_loading, c.row_noise, c.col_noise)
        )
    return MixtureParams(tuple(comps))


def vec_f(x):
    """Column-stacking vectorization."""
    return np.asarray(x).reshape(-1, order="F")


def dense_log_density(x, params):
    """Matrix normal log-density through the stacked multivariate normal."""
    cov = np.kron(params.col_scale.dense(), params.row_scale.dense())
    return scipy.stats.multivariate_normal.logpdf(
        vec_f(x), mean=vec_f(params.mean), cov=cov)


def dense_mahalanobis(x, params):
    r = np.asarray(x) - params.mean
    row_inv = np.linalg.inv(params.row_scale.dense())
    col_inv = np.linalg.inv(params.col_scale.dense())
    return float(np.trace(row_inv @ r @ col_inv @ r.T))


def dense_latent_moments(x, comp):
    """LatentMoments recomputed with dense inverses only."""
    n, p, q, r = comp.dims
    resid = np.asarray(x) - comp.mean
    sig_inv = np.diag(1.0 / comp.row_noise)
    psi_inv = np.diag(1.0 / comp.col_noise)
    lam_a_inv = np.linalg.inv(np.diag(comp.row_noise)
                              + comp.left_loading @ comp.left_loading.T)
    lam_b_inv = np.linalg.inv(np.diag(comp.col_noise)
                              + comp.right_loading @ comp.right_loading.T)
    w_a_inv = np.linalg.inv(np.eye(q) + comp.left_loading.T @ sig_inv @ comp.left_loading)
    w_b_inv = np.linalg.inv(np.eye(r) + comp.right_loading.T @ psi_inv @ comp.right_loading)
    a_b = w_a_inv @ comp.left_loading.T @ sig_inv @ resid
    b_b = p * w_a_inv + a_b @ lam_b_inv @ a_b.T
    a_a = resid @ psi_inv @ comp.right_loading @ w_b_inv
    b_a = n * w_b_inv + a_a.T @ lam_a_inv @ a_a
    return a_b, b_b, a_a, b_a


def transpose_mixture(params):
    """The same mixture viewed over transposed observations."""
    return MixtureParams(tuple(
        ComponentParams(c.weight, c.mean.T, c.right_loading, c.left_loading,
                        c.col_noise, c.row_noise)
        for c in params.components))


def max_param_delta(a, b, transposed=False):
    """Largest elementwise parameter difference between two mixtures."""
    worst = 0.0
    for c, d in zip(a.components, b.components):
        if transposed:
            pieces = ((c.mean, d.mean.T), (c.left_loading, d.right_loading),
                      (c.right_loading, d.left_loading), (c.row_noise, d.col_noise),
                      (c.col_noise, d.row_noise))
        else:
            pieces = ((c.mean, d.mean), (c.left_loading, d.left_loading),
                      (c.right_loading, d.right_loading), (c.row_noise, d.row_noise),
                      (c.col_noise, d.col_noise))
        worst = max(worst, abs(c.weight - d.weight))
        for u, v in pieces:
            if u.size:
                worst = max(worst, float(np.abs(u - v).max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
