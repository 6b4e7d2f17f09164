"""Grid-based comparison of posteriors.

Densities are compared on ``per_dim^K`` cell-centre grids whose bounds are
the joint range of samples from the two distributions. Both densities are
renormalized to unit mass over the grid and compared with the natural-log
Jensen-Shannon divergence, which lies in ``[0, ln 2]``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .core import (
    RNG_NAME,
    InsufficientBudgetError,
    SeedLike,
    SimTable,
    UniformBoxPrior,
    distances,
    fit_standardizer,
    make_rng,
    spawn,
)
from .grid import DensityGrid, GridSpec, product_kde_on_grid, silverman_bandwidths
from .pipeline import KdePosterior, _fit_regression
from .regression import MlpSpec, adjust
from .simulators import (
    BenchmarkModel,
    ModelKind,
    gc_toy_log_likelihood,
    linear_gaussian_posterior,
    simulate_table,
)

__all__ = [
    "GridSpec",
    "DensityGrid",
    "AnalyticPosterior",
    "Comparison",
    "HeterogeneityRow",
    "ContourSlice",
    "build_grid",
    "jsd",
    "simulate_pool",
    "reference_posterior",
    "analytic_posterior",
    "compare",
    "residual_heterogeneity",
    "contour_slice",
    "write_grid_csv",
    "read_grid_csv",
    "write_table_csv",
    "write_meta_json",
    "DIAGNOSTIC_QUANTILES",
]

DIAGNOSTIC_QUANTILES = (0.001, 0.01, 0.1, 0.25)
MIN_ACCEPTED = 200
WIDEN = 1e-6


def build_grid(samples_p, samples_q, per_dim: int = 30) -> GridSpec:
    """Grid spanning the joint per-dimension range of both sample sets.

    Dimensions of zero width are widened by ``1e-6`` on each side and the
    grid is flagged as ``widened``.
    """
    p = np.asarray(samples_p, dtype=float)
    q = np.asarray(samples_q, dtype=float)
    p = p[:, None] if p.ndim == 1 else p
    q = q[:, None] if q.ndim == 1 else q
    if p.size == 0 or q.size == 0:
        raise ValueError("both sample sets must be nonempty")
    if p.shape[1] != q.shape[1]:
        raise ValueError("sample sets have different dimensions")
    both = np.vstack([p, q])
    lo, hi = both.min(axis=0), both.max(axis=0)
    flat = hi <= lo
    lo = np.where(flat, lo - WIDEN, lo)
    hi = np.where(flat, hi + WIDEN, hi)
    return GridSpec(np.column_stack([lo, hi]), per_dim, bool(np.any(flat)))


def jsd(p: DensityGrid, q: DensityGrid) -> float:
    """Natural-log Jensen-Shannon divergence between two densities on the same grid."""
    if not p.grid.same_as(q.grid):
        raise ValueError("densities live on different grids")
    a, b = p.values.ravel(), q.values.ravel()
    if np.array_equal(a, b):
        return 0.0
    # KL(a || (a+b)/2) = sum rel_entr(a, a+b) + ln 2 for unit-mass a. Dividing by
    # a + b instead of (a + b) / 2 cannot underflow to zero next to a subnormal
    # cell, and rel_entr(0, y) = 0 handles empty cells.
    s = a + b
    val = 0.5 * np.sum(special.rel_entr(a, s)) + 0.5 * np.sum(special.rel_entr(b, s)) + math.log(2.0)
    return float(min(max(val, 0.0), math.log(2.0)))


# ---------------------------------------------------------------------------
# analytic posteriors


@dataclass(frozen=True)
class AnalyticPosterior:
    """Posterior with a known unnormalized log density on the prior box."""

    log_density: Callable[[np.ndarray], np.ndarray]
    prior: UniformBoxPrior
    method: str = "analytic"

    @property
    def dim(self) -> int:
        return self.prior.dim

    def _log_at(self, pts) -> np.ndarray:
        out = np.full(pts.shape[0], -np.inf)
        inside = self.prior.contains(pts)
        if np.any(inside):
            out[inside] = self.log_density(pts[inside])
        return out

    def on_grid(self, grid: GridSpec) -> DensityGrid:
        logv = self._log_at(grid.points())
        top = np.max(logv)
        if not np.isfinite(top):
            raise ValueError("analytic posterior is zero on every grid point")
        return DensityGrid(grid, np.exp(logv - top))

    def _zoomed_grid(self, per_dim: int = 30, rounds: int = 3, floor: float = 1e-12) -> tuple[GridSpec, np.ndarray]:
        grid = GridSpec(self.prior.bounds, per_dim)
        for _ in range(rounds):
            logv = self._log_at(grid.points()).reshape(grid.shape)
            keep = logv > np.max(logv) + math.log(floor)
            bounds = grid.bounds.copy()
            for k in range(grid.dim):
                other = tuple(j for j in range(grid.dim) if j != k)
                idx = np.nonzero(np.any(keep, axis=other) if other else keep)[0]
                lo = grid.bounds[k, 0] + max(idx[0] - 1, 0) * grid.steps[k]
                hi = grid.bounds[k, 0] + min(idx[-1] + 2, per_dim) * grid.steps[k]
                bounds[k] = [lo, hi]
            grid = GridSpec(bounds, per_dim)
        logv = self._log_at(grid.points())
        return grid, logv

    def sample(self, count: int, seed: SeedLike) -> np.ndarray:
        """Approximate draws: pick cells of a zoomed grid by mass, jitter uniformly inside."""
        grid, logv = self._zoomed_grid()
        w = np.exp(logv - np.max(logv))
        w /= w.sum()
        rng = make_rng(seed)
        idx = rng.choice(w.size, size=count, p=w)
        jitter = (rng.random((count, grid.dim)) - 0.5) * grid.steps
        return grid.points()[idx] + jitter

    def bound_samples(self, count: int = 2000, seed: SeedLike = 0) -> np.ndarray:
        return self.sample(count, seed)


def analytic_posterior(model: BenchmarkModel, s_obs=None, x_obs=None) -> AnalyticPosterior:
    """Exact posterior for the GC toy model (needs ``x_obs``) or the linear-Gaussian model."""
    if model.kind is ModelKind.GC_TOY:
        if x_obs is None:
            raise ValueError("the GC toy posterior needs the raw observed data")
        x = np.asarray(x_obs, dtype=float)
        return AnalyticPosterior(lambda t: gc_toy_log_likelihood(x, t), model.prior)
    if model.kind is ModelKind.LINEAR_GAUSSIAN:
        mean, cov = linear_gaussian_posterior(model, s_obs)
        prec = np.linalg.inv(cov)

        def logp(t):
            d = t - mean
            return -0.5 * np.einsum("ij,jk,ik->i", d, prec, d)

        return AnalyticPosterior(logp, model.prior)
    raise ValueError(f"no analytic posterior for model {model.name!r}")


# ---------------------------------------------------------------------------
# reference posteriors


def simulate_pool(model: BenchmarkModel, budget: int, seed: SeedLike) -> SimTable:
    """Prior-predictive table used to build reference posteriors."""
    a, b = spawn(seed, 2)
    thetas = model.prior.sample(budget, make_rng(a))
    return simulate_table(model, thetas, b, proposal="prior")


def reference_posterior(
    model: BenchmarkModel,
    prior: UniformBoxPrior,
    s_obs,
    ref_budget: int,
    quantile: float,
    seed: SeedLike,
    *,
    pool: SimTable | None = None,
) -> KdePosterior:
    """Rejection ABC at a distance quantile of a large prior pool, smoothed by a product KDE.

    ``pool`` lets several observed datasets share one simulated table; when
    given, its first ``ref_budget`` rows are used and no simulation happens.
    Call :meth:`KdePosterior.on_grid` to obtain the density grid.
    """
    if not 0.0 < quantile <= 1.0:
        raise ValueError("quantile must lie in (0, 1]")
    n_accept = int(round(ref_budget * quantile))
    if n_accept < MIN_ACCEPTED:
        raise InsufficientBudgetError(
            f"budget {ref_budget} at quantile {quantile} accepts {n_accept} samples; need at least {MIN_ACCEPTED}"
        )
    if pool is None:
        pool = simulate_pool(model, ref_budget, seed)
    elif len(pool) < ref_budget:
        raise InsufficientBudgetError(f"pool holds {len(pool)} rows, fewer than ref_budget={ref_budget}")
    theta, summaries = pool.theta[:ref_budget], pool.summaries[:ref_budget]
    d = distances(summaries, s_obs, fit_standardizer(summaries))
    order = np.argsort(d, kind="stable")[:n_accept]
    return KdePosterior(
        theta[order], method="reference", n_sims=ref_budget, flags={"epsilon": float(d[order[-1]]), "quantile": quantile}
    )


# ---------------------------------------------------------------------------
# comparison


@dataclass
class Comparison:
    jsd: float
    grid: GridSpec
    p: DensityGrid
    q: DensityGrid


def compare(p_est, q_est, per_dim: int = 30, count: int = 2000, seed: SeedLike = 0) -> Comparison:
    """JSD of two posterior estimates on the grid spanned by their samples.

    Each estimate provides ``bound_samples(count, seed)`` and ``on_grid(grid)``.
    """
    sp, sq = spawn(seed, 2)
    grid = build_grid(p_est.bound_samples(count, sp), q_est.bound_samples(count, sq), per_dim)
    p, q = p_est.on_grid(grid), q_est.on_grid(grid)
    return Comparison(jsd(p, q), grid, p, q)


# ---------------------------------------------------------------------------
# residual heterogeneity


@dataclass(frozen=True)
class HeterogeneityRow:
    quantile: float
    jsd: float
    n_rows: int
    epsilon: float


def _kde_jsd(a, b, per_dim):
    grid = build_grid(a, b, per_dim)
    pa = DensityGrid(grid, product_kde_on_grid(a, silverman_bandwidths(a), grid))
    pb = DensityGrid(grid, product_kde_on_grid(b, silverman_bandwidths(b), grid))
    return jsd(pa, pb)


def residual_heterogeneity(
    model: BenchmarkModel,
    prior: UniformBoxPrior,
    s_obs,
    epsilon_quantiles: Sequence[float] = DIAGNOSTIC_QUANTILES,
    budget: int = 200_000,
    seed: SeedLike = 0,
    *,
    table: SimTable | None = None,
    regression: str = "select",
    spec: MlpSpec = MlpSpec(),
    per_dim: int = 30,
) -> list[HeterogeneityRow]:
    """How much the residual distribution changes across growing distance balls.

    ``g`` is fitted on the whole prior table. The residuals of the rows in
    the smallest-quantile ball stand in for ``p(xi | s_obs)``; each
    quantile's ball gives ``p_eps(xi)``. Both are smoothed with product KDEs
    and compared by grid JSD.
    """
    qs = sorted(float(q) for q in epsilon_quantiles)
    if not qs or qs[0] <= 0 or qs[-1] > 1:
        raise ValueError("quantiles must lie in (0, 1]")
    sizes = [int(round(q * budget)) for q in qs]
    if sizes[0] < MIN_ACCEPTED:
        raise InsufficientBudgetError(f"smallest ball keeps {sizes[0]} rows; need at least {MIN_ACCEPTED}")
    sim_seed, fit_seed = spawn(seed, 2)
    if table is None:
        table = simulate_pool(model, budget, sim_seed)
    elif len(table) < budget:
        raise InsufficientBudgetError(f"table holds {len(table)} rows, fewer than budget={budget}")
    else:
        table = table.head(budget)
    d = distances(table.summaries, s_obs, fit_standardizer(table.summaries))
    order = np.argsort(d, kind="stable")
    g = _fit_regression(regression, table, spec, fit_seed)
    _, resid = adjust(g, table, s_obs)
    base = resid[order[: sizes[0]]]
    rows = []
    for q, n in zip(qs, sizes):
        ball = resid[order[:n]]
        rows.append(HeterogeneityRow(q, _kde_jsd(base, ball, per_dim), n, float(d[order[n - 1]])))
    return rows


# ---------------------------------------------------------------------------
# contour slices


@dataclass(frozen=True)
class ContourSlice:
    """Two-dimensional marginal of a grid density, normalized to unit mass."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    dims: tuple

    def triples(self) -> np.ndarray:
        """``(x, y, mass)`` rows, ``x`` varying slowest."""
        xx, yy = np.meshgrid(self.x, self.y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), self.values.ravel()])


def contour_slice(grid: DensityGrid, dims: tuple[int, int] = (0, 1)) -> ContourSlice:
    """Sum out every dimension except ``dims`` and renormalize."""
    i, j = dims
    k = grid.grid.dim
    if k < 2:
        raise ValueError("need at least two dimensions")
    if i == j or not (0 <= i < k and 0 <= j < k):
        raise ValueError("dims must be two distinct valid axes")
    other = tuple(a for a in range(k) if a not in (i, j))
    vals = grid.values.sum(axis=other) if other else grid.values
    if i > j:
        vals = vals.T
    vals = vals / vals.sum()
    axes = grid.grid.axes()
    return ContourSlice(axes[i], axes[j], vals, (i, j))


# ---------------------------------------------------------------------------
# files


def write_grid_csv(grid: DensityGrid, path) -> None:
    """One row per grid point: coordinates then the density (mass per unit volume)."""
    pts = grid.points()
    dens = grid.density().ravel()
    header = [f"theta{k}" for k in range(grid.grid.dim)] + ["density"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, v in zip(pts, dens):
            w.writerow([repr(float(c)) for c in row] + [repr(float(v))])


def read_grid_csv(path) -> DensityGrid:
    """Inverse of :func:`write_grid_csv` (the grid is recovered from the coordinates)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts, dens = data[:, :-1], data[:, -1]
    axes = [np.unique(pts[:, k]) for k in range(pts.shape[1])]
    per_dim = axes[0].size
    if any(a.size != per_dim for a in axes) or per_dim**pts.shape[1] != pts.shape[0]:
        raise ValueError("file does not hold a full product grid")
    steps = [a[1] - a[0] for a in axes]
    bounds = [[a[0] - 0.5 * s, a[-1] + 0.5 * s] for a, s in zip(axes, steps)]
    grid = GridSpec(bounds, per_dim)
    order = np.lexsort(pts.T[::-1])
    return DensityGrid(grid, dens[order].reshape(grid.shape))


def write_table_csv(rows, path, columns: Sequence[str]) -> None:
    """Rows of mappings or dataclasses to CSV with the given column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            get = r.get if isinstance(r, dict) else lambda c, r=r: getattr(r, c)
            w.writerow([_fmt(get(c)) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_meta_json(path, meta: dict) -> None:
    """Metadata sidecar; the RNG name is always recorded."""
    payload = {"rng": RNG_NAME, **meta}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, os.PathLike):
        return os.fspath(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
