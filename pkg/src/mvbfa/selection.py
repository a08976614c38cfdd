"""Model selection over a grid of component and factor counts.

Every grid cell (G, q, r) gets its own multi-start fit and a BIC value
2*loglik - rho*log(N) (larger is better), with rho the free-parameter count.
When the winner sits on the top edge of a factor range, the range is extended
one step at a time while the projection in that direction still reduces the
free covariance parameters, i.e. while (d - k)^2 > d + k for dimension d and
the extended count k.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .aecm import FitConfig, FitResult, fit_multi_start, min_component_mass
from .dataio import DataSet3D
from .errors import FitError, InputError, MvbfaError

__all__ = [
    "count_params",
    "bic",
    "GridSpec",
    "SelectionRecord",
    "GridResult",
    "grid_search",
    "selection_table",
    "worker_count",
]


def count_params(G: int, n: int, p: int, q: int, r: int) -> int:
    """Free parameters: G-1 weights plus per component the location entries,
    both diagonal noises, and both loadings net of their rotational
    indeterminacies (k(k-1)/2 each)."""
    if G < 1 or n < 1 or p < 1 or q < 0 or r < 0:
        raise InputError("invalid dimensions for parameter count")
    per_comp = n * p + (n * q + n - q * (q - 1) // 2) + (p * r + p - r * (r - 1) // 2)
    return (G - 1) + G * per_comp


def bic(log_lik: float, rho: int, size: int) -> float:
    """2*loglik - rho*log(N); larger is better."""
    if size < 1:
        raise InputError("size must be >= 1")
    return 2.0 * log_lik - rho * math.log(size)


def _reduces_params(d: int, k: int) -> bool:
    # extending a loading to k columns still shrinks the covariance
    # parameterization of a d-dimensional side only while (d-k)^2 > d+k
    return (d - k) ** 2 > d + k


@dataclass(frozen=True)
class GridSpec:
    """Candidate component counts and factor ranges for the search."""

    g_values: tuple[int, ...]
    q_values: tuple[int, ...]
    r_values: tuple[int, ...]
    expand: bool = True

    def __post_init__(self):
        for name in ("g_values", "q_values", "r_values"):
            vals = tuple(sorted(set(int(v) for v in getattr(self, name))))
            if not vals:
                raise InputError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if self.g_values[0] < 1:
            raise InputError("component counts must be >= 1")
        if self.q_values[0] < 0 or self.r_values[0] < 0:
            raise InputError("factor counts must be >= 0")


@dataclass(frozen=True)
class SelectionRecord:
    """One fitted grid cell."""

    G: int
    q: int
    r: int
    log_lik: float
    rho: int
    bic: float
    converged: bool
    fit: FitResult


@dataclass(frozen=True)
class GridResult:
    """Winner plus every attempted cell; failures carry their cause."""

    best: SelectionRecord
    records: tuple[SelectionRecord, ...]
    failures: tuple[tuple[int, int, int, str], ...]
    shape: tuple[int, int]


def cell_seed(base_seed: int, G: int, q: int, r: int) -> int:
    """Deterministic per-cell seed independent of grid enumeration order."""
    ss = np.random.SeedSequence([base_seed & 0xFFFFFFFFFFFFFFFF, G, q, r])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _fit_cell(args):
    data, config, G, q, r = args
    cfg = replace(config, G=G, q=q, r=r, seed=cell_seed(config.seed, G, q, r))
    try:
        fit = fit_multi_start(data, cfg)
    except MvbfaError as exc:
        return (G, q, r, None, str(exc))
    rho = count_params(G, data.obs.shape[1], data.obs.shape[2], q, r)
    value = bic(fit.log_lik, rho, data.size)
    rec = SelectionRecord(G, q, r, fit.log_lik, rho, value, fit.converged, fit)
    return (G, q, r, rec, None)


def worker_count() -> int:
    """Worker cap: MVBFA_THREADS when set, else the machine's CPU count."""
    env = os.environ.get("MVBFA_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise InputError(f"MVBFA_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise InputError("MVBFA_THREADS must be >= 1")
        return cap
    return os.cpu_count() or 1


def grid_search(data: DataSet3D, grid: GridSpec, config: FitConfig) -> GridResult:
    """Fit every cell, rank by BIC, and expand factor ranges at the boundary.

    Each cell's fit is seeded from (seed, G, q, r) so results do not depend on
    enumeration order or worker scheduling. Ties break toward fewer parameters
    and then lexicographically smaller (G, q, r). Failed cells are excluded
    from the ranking but reported; every cell failing raises FitError.
    """
    n, p = data.shape
    if grid.q_values[-1] >= n or grid.r_values[-1] >= p:
        raise InputError(
            f"factor ranges must satisfy q < n={n} and r < p={p}, "
            f"got q up to {grid.q_values[-1]}, r up to {grid.r_values[-1]}"
        )
    mass_bound = min_component_mass(grid.q_values[-1], grid.r_values[-1])
    if max(grid.g_values) * mass_bound > data.size:
        raise InputError("grid asks for more components than the data can hold")
    q_values = list(grid.q_values)
    r_values = list(grid.r_values)
    done: dict[tuple[int, int, int], SelectionRecord | None] = {}
    failures: list[tuple[int, int, int, str]] = []

    def run(cells):
        cells = [c for c in cells if c not in done]
        jobs = [(data, config, G, q, r) for (G, q, r) in cells]
        workers = min(worker_count(), len(jobs)) if jobs else 0
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_fit_cell, jobs))
        else:
            results = [_fit_cell(j) for j in jobs]
        for G, q, r, rec, err in results:
            done[(G, q, r)] = rec
            if rec is None:
                failures.append((G, q, r, err))

    run(list(itertools.product(grid.g_values, q_values, r_values)))
    while True:
        ranked = [rec for rec in done.values() if rec is not None]
        if not ranked:
            raise FitError(
                "every grid cell failed: "
                + "; ".join(f"(G={g},q={q},r={r}): {m}" for g, q, r, m in failures)
            )
        best = min(ranked, key=lambda rec: (-rec.bic, rec.rho, rec.G, rec.q, rec.r))
        if not grid.expand:
            break
        if best.q == q_values[-1] and best.q + 1 < n and _reduces_params(n, best.q + 1):
            q_values.append(best.q + 1)
            run([(G, q_values[-1], r) for G in grid.g_values for r in r_values])
            continue
        if best.r == r_values[-1] and best.r + 1 < p and _reduces_params(p, best.r + 1):
            r_values.append(best.r + 1)
            run([(G, q, r_values[-1]) for G in grid.g_values for q in q_values])
            continue
        break
    records = tuple(sorted((rec for rec in done.values() if rec is not None),
                           key=lambda rec: (rec.G, rec.q, rec.r)))
    return GridResult(best=best, records=records, failures=tuple(failures),
                      shape=(n, p))


def selection_table(result: GridResult) -> str:
    """Delimited text table of every attempted cell, one record per line."""
    n, p = result.shape
    lines = ["G,q,r,loglik,rho,bic,converged"]
    for rec in result.records:
        lines.append(
            f"{rec.G},{rec.q},{rec.r},{rec.log_lik!r},{rec.rho},{rec.bic!r},"
            + ("true" if rec.converged else "false")
        )
    for G, q, r, _ in result.failures:
        lines.append(f"{G},{q},{r},nan,{count_params(G, n, p, q, r)},nan,failed")
    return "\n".join(lines) + "\n"
