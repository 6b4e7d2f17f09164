"""Benchmark simulators, their summary statistics and analytic posteriors.

Four benchmark problems ship with the package (Gaussian-copula toy, M/G/1
queue, MA(2) time series and stochastic Lotka-Volterra) plus a
linear-Gaussian model whose posterior is known in closed form, used for
end-to-end checks.

Batch simulation works on fixed-size chunks of rows. Every chunk draws its
noise from its own spawned stream, always for the full chunk size, so the
output for row ``i`` depends only on ``(seed, i, theta[i])``. This keeps
tables bitwise reproducible and lets tables with a common seed share their
leading rows.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import _gillespie
from ._numerics import newton_invert as _newton_invert
from .core import SeedLike, SimTable, UniformBoxPrior, make_rng, spawn
from .grid import DensityGrid, GridSpec

__all__ = [
    "ModelKind",
    "BenchmarkModel",
    "gc_toy",
    "mg1",
    "ma2",
    "lotka_volterra",
    "linear_gaussian",
    "get_model",
    "MODEL_NAMES",
    "simulate",
    "summarize",
    "simulate_summaries",
    "simulate_table",
    "observe",
    "gc_toy_log_likelihood",
    "gc_toy_true_posterior",
    "linear_gaussian_posterior",
    "raw_to_csv",
    "summaries_to_csv",
]

CHUNK = 512

GC_LEVELS = np.arange(1, 21) / 21.0
MG1_LEVELS = np.linspace(0.0, 1.0, 16)
LV_DT = 0.2
LV_RECORDS = 41
LV_INIT = (50, 100)
LV_MAX_EVENTS = 1_000_000


class ModelKind(str, enum.Enum):
    GC_TOY = "gc_toy"
    MG1 = "mg1"
    MA2 = "ma2"
    LOTKA_VOLTERRA = "lv"
    LINEAR_GAUSSIAN = "linear_gaussian"


@dataclass(frozen=True)
class BenchmarkModel:
    """A simulator together with its prior and true parameters.

    ``options`` carries model-specific switches: ``lv_summary`` ("records" or
    "differences") for Lotka-Volterra, ``noise_cov`` for the linear-Gaussian
    model.
    """

    kind: ModelKind
    true_theta: np.ndarray
    prior: UniformBoxPrior
    obs_size: int
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        theta = np.asarray(self.true_theta, dtype=float)
        object.__setattr__(self, "true_theta", theta)
        if not self.prior.contains(theta):
            raise ValueError("true parameters must lie inside the prior box")
        if self.obs_size <= 0:
            raise ValueError("obs_size must be positive")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def theta_dim(self) -> int:
        return self.prior.dim

    @property
    def summary_dim(self) -> int:
        k = self.kind
        if k is ModelKind.GC_TOY:
            return 2 * GC_LEVELS.size + 1
        if k is ModelKind.MG1:
            return MG1_LEVELS.size
        if k is ModelKind.MA2:
            return 2
        if k is ModelKind.LOTKA_VOLTERRA:
            return 2 * (LV_RECORDS - 1)
        return self.theta_dim

    @property
    def raw_shape(self) -> tuple:
        k = self.kind
        if k is ModelKind.GC_TOY:
            return (self.obs_size, 2)
        if k in (ModelKind.MG1, ModelKind.MA2):
            return (self.obs_size, 1)
        if k is ModelKind.LOTKA_VOLTERRA:
            return (LV_RECORDS, 2)
        return (self.obs_size, self.theta_dim)


def gc_toy() -> BenchmarkModel:
    prior = UniformBoxPrior([0.5, 0.0, 0.4], [12.5, 1.0, 0.8])
    return BenchmarkModel(ModelKind.GC_TOY, [6.0, 0.5, 0.6], prior, 200)


def mg1() -> BenchmarkModel:
    prior = UniformBoxPrior([0.0, 2.0, 0.0], [10.0, 6.0, 1.0 / 3.0])
    return BenchmarkModel(ModelKind.MG1, [1.0, 4.0, 0.2], prior, 200)


def ma2() -> BenchmarkModel:
    prior = UniformBoxPrior([0.0, 0.0], [1.0, 1.0])
    return BenchmarkModel(ModelKind.MA2, [0.6, 0.2], prior, 200)


def lotka_volterra(summary: str = "records") -> BenchmarkModel:
    if summary not in ("records", "differences"):
        raise ValueError("summary must be 'records' or 'differences'")
    # theta3 lower bound widened from -1 so that log(0.1) lies inside the box
    prior = UniformBoxPrior([-5.0, -1.0, -3.0], [-1.0, 1.0, 1.0])
    true = [np.log(0.01), np.log(0.5), np.log(0.1)]
    return BenchmarkModel(ModelKind.LOTKA_VOLTERRA, true, prior, LV_RECORDS, {"lv_summary": summary})


def linear_gaussian(
    dim: int = 2, obs_size: int = 10, rho: float = 0.5, half_width: float = 5.0, noise_sd: float = 1.0
) -> BenchmarkModel:
    """``x_i ~ N(theta, C)`` with ``C = noise_sd^2 R`` and ``R`` equicorrelated; the summary is the sample mean.

    With a flat prior on ``[-half_width, half_width]^dim`` the posterior is
    ``N(s_obs, C / obs_size)`` truncated to the box. ``noise_sd = 0`` gives
    the noiseless model ``s = theta``.
    """
    cov = noise_sd**2 * (np.full((dim, dim), rho) + (1.0 - rho) * np.eye(dim))
    prior = UniformBoxPrior(-half_width * np.ones(dim), half_width * np.ones(dim))
    true = np.linspace(0.5, -0.5, dim) if dim > 1 else np.array([0.5])
    return BenchmarkModel(ModelKind.LINEAR_GAUSSIAN, true, prior, obs_size, {"noise_cov": cov.tolist()})


_FACTORIES = {
    "gc_toy": gc_toy,
    "mg1": mg1,
    "ma2": ma2,
    "lv": lotka_volterra,
    "linear_gaussian": linear_gaussian,
}
MODEL_NAMES = tuple(_FACTORIES)


def get_model(name: str, **options) -> BenchmarkModel:
    aliases = {"lotka_volterra": "lv", "gc": "gc_toy", "m/g/1": "mg1", "ma(2)": "ma2"}
    key = aliases.get(name.lower(), name.lower())
    if key not in _FACTORIES:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return _FACTORIES[key](**options)


# ---------------------------------------------------------------------------
# GC toy marginals

def _beta2_cdf(x, a):
    return (a + 1.0) * x**a - a * x ** (a + 1.0)


def _beta2_pdf(x, a):
    return a * (a + 1.0) * x ** (a - 1.0) * (1.0 - x)


def _beta2_logpdf(x, a):
    return np.log(a) + np.log1p(a) + (a - 1.0) * np.log(x) + np.log1p(-x)


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _mix_cdf(x, w):
    return w * special.ndtr(x - 1.0) + (1.0 - w) * special.ndtr((x - 4.0) / 0.5)


def _mix_pdf(x, w):
    a = np.exp(-0.5 * (x - 1.0) ** 2)
    b = np.exp(-2.0 * (x - 4.0) ** 2) * 2.0
    return _INV_SQRT_2PI * (w * a + (1.0 - w) * b)


def _mix_ppf(u, w):
    """Inverse CDF of ``w N(1, 1) + (1 - w) N(4, 0.5^2)``."""
    u = np.clip(np.asarray(u, dtype=float), 1e-300, 1.0 - 1e-16)
    shape = u.shape
    u = u.ravel()
    w = np.broadcast_to(w, shape).ravel()
    q = special.ndtri(u)
    a, b = 1.0 + q, 4.0 + 0.5 * q
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    x0 = np.where(w >= 0.5, a, b)
    return _newton_invert(_mix_cdf, _mix_pdf, u, w, lo, hi, x0).reshape(shape)


def _beta2_ppf(u, a):
    """Inverse of the closed-form ``Beta(a, 2)`` CDF."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    shape = u.shape
    u = u.ravel()
    a = np.broadcast_to(a, shape).ravel()
    x0 = np.clip(u ** (1.0 / (a + 1.0)), 1e-300, 1.0 - 1e-16)
    lo, hi = np.zeros_like(u), np.ones_like(u)
    return _newton_invert(_beta2_cdf, _beta2_pdf, u, a, lo, hi, x0).reshape(shape)


def _gc_clip(theta):
    # proposal draws may leave the prior box; keep them in the model's domain
    t = np.array(theta, dtype=float, copy=True)
    t[..., 0] = np.maximum(t[..., 0], 1e-3)
    t[..., 1] = np.clip(t[..., 1], 0.0, 1.0)
    t[..., 2] = np.clip(t[..., 2], -0.999, 0.999)
    return t


def _normal_scores_corr(x):
    """Correlation of rank-based normal scores, ranks scaled by ``1/(n+1)``."""
    n = x.shape[0]
    z = special.ndtri(stats.rankdata(x, axis=0) / (n + 1.0))
    z = z - z.mean(axis=0)
    return float(np.sum(z[:, 0] * z[:, 1]) / np.sqrt(np.sum(z[:, 0] ** 2) * np.sum(z[:, 1] ** 2)))


# ---------------------------------------------------------------------------
# noise draws and their transformation, per model

def _draw_noise(model: BenchmarkModel, rng: np.random.Generator) -> dict:
    k, n = model.kind, model.obs_size
    if k is ModelKind.GC_TOY:
        return {"e": rng.standard_normal((CHUNK, n, 2))}
    if k is ModelKind.MG1:
        return {"u": rng.random((CHUNK, n)), "e": rng.standard_exponential((CHUNK, n))}
    if k is ModelKind.MA2:
        return {"w": rng.standard_normal((CHUNK, n + 2))}
    if k is ModelKind.LOTKA_VOLTERRA:
        return {"seeds": rng.integers(0, 2**32, size=CHUNK, dtype=np.uint32)}
    return {"e": rng.standard_normal((CHUNK, n, model.theta_dim))}


def _gc_latent(theta, e):
    rho = theta[:, 2][:, None]
    z1 = e[..., 0]
    z2 = rho * z1 + np.sqrt(1.0 - rho**2) * e[..., 1]
    return z1, z2


def _gc_transform(theta, z1, z2):
    x1 = _beta2_ppf(special.ndtr(z1), theta[:, 0][:, None])
    x2 = _mix_ppf(special.ndtr(z2), theta[:, 1][:, None])
    return x1, x2


def _mg1_gaps(theta, u, e):
    rows, n = u.shape
    service = theta[:, 0][:, None] + theta[:, 1][:, None] * u
    rate = np.maximum(theta[:, 2], 1e-12)[:, None]
    visits = np.cumsum(e / rate, axis=1)
    gaps = np.empty((rows, n))
    d = np.zeros(rows)
    for i in range(n):
        d_new = d + service[:, i] + np.maximum(0.0, visits[:, i] - d)
        gaps[:, i] = d_new - d
        d = d_new
    return gaps


def _ma2_series(theta, w):
    return w[:, 2:] + theta[:, 0][:, None] * w[:, 1:-1] + theta[:, 1][:, None] * w[:, :-2]


def _ma2_summary(x):
    n = x.shape[-1]
    g1 = np.sum(x[..., 1:] * x[..., :-1], axis=-1) / n
    g2 = np.sum(x[..., 2:] * x[..., :-2], axis=-1) / n
    return np.stack([g1, g2], axis=-1)


def _lv_run(theta, seeds):
    rows = theta.shape[0]
    out = np.zeros((rows, LV_RECORDS, 2), dtype=np.int64)
    truncated = np.zeros(rows, dtype=np.bool_)
    _gillespie.lv_records(
        np.ascontiguousarray(theta, dtype=float),
        np.ascontiguousarray(seeds, dtype=np.uint32),
        LV_INIT[0],
        LV_INIT[1],
        LV_DT,
        LV_MAX_EVENTS,
        out,
        truncated,
    )
    return out, truncated


def _lv_summary(records, mode):
    if mode == "differences":
        body = np.diff(records, axis=-2)
    else:
        body = records[..., 1:, :]
    # predator block first, then prey
    return np.swapaxes(body, -1, -2).reshape(*records.shape[:-2], -1).astype(float)


def _lg_data(model, theta, e):
    # symmetric square root, which also covers a singular (e.g. zero) covariance
    w, v = np.linalg.eigh(np.asarray(model.options["noise_cov"], dtype=float))
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return theta[:, None, :] + e @ root


def _raw_from_noise(model, theta, noise, rows):
    k = model.kind
    if k is ModelKind.GC_TOY:
        t = _gc_clip(theta)
        z1, z2 = _gc_latent(t, noise["e"][:rows])
        x1, x2 = _gc_transform(t, z1, z2)
        return np.stack([x1, x2], axis=-1), np.zeros(rows, bool)
    if k is ModelKind.MG1:
        return _mg1_gaps(theta, noise["u"][:rows], noise["e"][:rows])[..., None], np.zeros(rows, bool)
    if k is ModelKind.MA2:
        return _ma2_series(theta, noise["w"][:rows])[..., None], np.zeros(rows, bool)
    if k is ModelKind.LOTKA_VOLTERRA:
        return _lv_run(theta, noise["seeds"][:rows])
    return _lg_data(model, theta, noise["e"][:rows]), np.zeros(rows, bool)


def _lerp_levels(n, levels):
    h = (n - 1) * levels
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, h - lo


def _gc_summaries_fast(theta, e):
    """GC toy summaries from latent draws without inverting every data point.

    Quantiles only need the two order statistics around each level, and the
    rank correlation only needs latent ranks, both invariant under the
    monotone marginal transforms.
    """
    t = _gc_clip(theta)
    z1, z2 = _gc_latent(t, e)
    n = z1.shape[1]
    lo, hi, frac = _lerp_levels(n, GC_LEVELS)
    s1, s2 = np.sort(z1, axis=1), np.sort(z2, axis=1)
    idx = np.concatenate([lo, hi])
    x1, x2 = _gc_transform(t, s1[:, idx], s2[:, idx])
    m = GC_LEVELS.size
    q1 = x1[:, :m] + frac * (x1[:, m:] - x1[:, :m])
    q2 = x2[:, :m] + frac * (x2[:, m:] - x2[:, :m])
    scores = special.ndtri(np.arange(1, n + 1) / (n + 1.0))
    r1 = np.argsort(np.argsort(z1, axis=1), axis=1)
    r2 = np.argsort(np.argsort(z2, axis=1), axis=1)
    a, b = scores[r1], scores[r2]
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    corr = np.sum(a * b, axis=1) / np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
    return np.column_stack([q1, q2, corr])


def _summaries_from_noise(model, theta, noise, rows):
    k = model.kind
    if k is ModelKind.GC_TOY:
        return _gc_summaries_fast(theta, noise["e"][:rows]), np.zeros(rows, bool)
    raw, flags = _raw_from_noise(model, theta, noise, rows)
    if k is ModelKind.MG1:
        return np.quantile(raw[..., 0], MG1_LEVELS, axis=1).T, flags
    if k is ModelKind.MA2:
        return _ma2_summary(raw[..., 0]), flags
    if k is ModelKind.LOTKA_VOLTERRA:
        return _lv_summary(raw, model.options.get("lv_summary", "records")), flags
    return raw.mean(axis=1), flags


# ---------------------------------------------------------------------------
# public simulation API

def _as_theta_rows(model, thetas):
    t = np.atleast_2d(np.asarray(thetas, dtype=float))
    if t.shape[1] != model.theta_dim:
        raise ValueError(f"expected {model.theta_dim} parameters per row, got {t.shape[1]}")
    return t


def simulate(model: BenchmarkModel, theta, seed: SeedLike) -> np.ndarray:
    """Simulate one raw dataset at ``theta``.

    Returns an array of shape ``model.raw_shape``. Lotka-Volterra runs that
    hit the event cap are reported with a ``RuntimeWarning``.
    """
    t = _as_theta_rows(model, theta)[:1]
    noise = _draw_noise(model, make_rng(spawn(seed, 1)[0]))
    raw, flags = _raw_from_noise(model, t, noise, 1)
    if flags[0]:
        warnings.warn("Lotka-Volterra event cap reached; trajectory truncated", RuntimeWarning, stacklevel=2)
    return raw[0]


def summarize(model: BenchmarkModel, raw) -> np.ndarray:
    """Summary statistics of one raw dataset as a ``(D,)`` array."""
    raw = np.asarray(raw)
    if raw.shape != model.raw_shape:
        raise ValueError(f"raw data has shape {raw.shape}, expected {model.raw_shape}")
    k = model.kind
    if k is ModelKind.GC_TOY:
        q = np.quantile(raw, GC_LEVELS, axis=0)
        return np.concatenate([q[:, 0], q[:, 1], [_normal_scores_corr(raw)]])
    if k is ModelKind.MG1:
        return np.quantile(raw[:, 0], MG1_LEVELS)
    if k is ModelKind.MA2:
        return _ma2_summary(raw[:, 0])
    if k is ModelKind.LOTKA_VOLTERRA:
        return _lv_summary(raw, model.options.get("lv_summary", "records"))
    return raw.mean(axis=0)


def simulate_summaries(model: BenchmarkModel, thetas, seed: SeedLike) -> tuple[np.ndarray, np.ndarray]:
    """Simulate and summarize one dataset per row of ``thetas``.

    Returns ``(summaries, truncated)`` where ``truncated`` flags
    Lotka-Volterra runs stopped by the event cap.
    """
    t = _as_theta_rows(model, thetas)
    n = t.shape[0]
    n_chunks = -(-n // CHUNK)
    out = np.empty((n, model.summary_dim))
    flags = np.zeros(n, dtype=bool)
    for c, ss in enumerate(spawn(seed, n_chunks)):
        sl = slice(c * CHUNK, min(n, (c + 1) * CHUNK))
        rows = sl.stop - sl.start
        noise = _draw_noise(model, make_rng(ss))
        out[sl], flags[sl] = _summaries_from_noise(model, t[sl], noise, rows)
    return out, flags


def simulate_table(model: BenchmarkModel, thetas, seed: SeedLike, proposal: str = "prior") -> SimTable:
    summaries, flags = simulate_summaries(model, thetas, seed)
    seed_int = int(seed) if not isinstance(seed, np.random.SeedSequence) else None
    return SimTable(np.atleast_2d(thetas), summaries, proposal, seed_int, flags)


def observe(model: BenchmarkModel, seed: SeedLike, theta=None) -> tuple[np.ndarray, np.ndarray]:
    """Observed raw data and summaries at ``theta`` (default: the true parameters)."""
    theta = model.true_theta if theta is None else np.asarray(theta, dtype=float)
    raw = simulate(model, theta, seed)
    return raw, summarize(model, raw)


# ---------------------------------------------------------------------------
# analytic posteriors

def gc_toy_log_likelihood(x_obs, thetas) -> np.ndarray:
    """Log-likelihood of GC toy data for each row of ``thetas``.

    Rows outside the model's parameter domain get ``-inf``.
    """
    x = np.asarray(x_obs, dtype=float)
    t = np.atleast_2d(np.asarray(thetas, dtype=float))
    a, w, rho = t[:, 0:1], t[:, 1:2], t[:, 2:3]
    valid = ((a > 0) & (w >= 0) & (w <= 1) & (np.abs(rho) < 1)).ravel()
    a = np.where(a > 0, a, 1.0)
    w = np.clip(w, 0.0, 1.0)
    rho = np.where(np.abs(rho) < 1, rho, 0.0)
    x1, x2 = x[None, :, 0], x[None, :, 1]
    u1 = np.clip(_beta2_cdf(x1, a), 1e-300, 1 - 1e-16)
    u2 = np.clip(_mix_cdf(x2, w), 1e-300, 1 - 1e-16)
    z1, z2 = special.ndtri(u1), special.ndtri(u2)
    one = 1.0 - rho**2
    log_c = -0.5 * np.log(one) - (rho**2 * (z1**2 + z2**2) - 2 * rho * z1 * z2) / (2 * one)
    with np.errstate(divide="ignore"):
        log_f = _beta2_logpdf(x1, a) + np.log(_mix_pdf(x2, w))
    ll = np.sum(log_c + log_f, axis=1)
    return np.where(valid, ll, -np.inf)


def gc_toy_true_posterior(x_obs, prior: UniformBoxPrior, grid: GridSpec) -> DensityGrid:
    """Exact GC toy posterior evaluated on ``grid`` and normalized over it."""
    x = np.asarray(x_obs, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2 or not np.all((x[:, 0] > 0) & (x[:, 0] < 1)):
        raise ValueError("x_obs must be an (n, 2) array with first column in (0, 1)")
    pts = grid.points()
    logp = np.full(pts.shape[0], -np.inf)
    inside = prior.contains(pts)
    logp[inside] = gc_toy_log_likelihood(x, pts[inside])
    logp -= logp.max()
    return DensityGrid(grid, np.exp(logp))


def linear_gaussian_posterior(model: BenchmarkModel, s_obs) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the (untruncated) posterior of the linear-Gaussian model."""
    cov = np.asarray(model.options["noise_cov"], dtype=float) / model.obs_size
    return np.asarray(s_obs, dtype=float), cov


# ---------------------------------------------------------------------------
# flat CSV export

def raw_to_csv(raw, path) -> None:
    """One replicate (row of the raw data matrix) per CSV line."""
    np.savetxt(path, np.atleast_2d(np.asarray(raw, dtype=float)), delimiter=",", fmt="%.17g")


def summaries_to_csv(summaries, path, thetas=None) -> None:
    s = np.atleast_2d(np.asarray(summaries, dtype=float))
    header = [f"s{d}" for d in range(s.shape[1])]
    if thetas is not None:
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        header = [f"theta{k}" for k in range(t.shape[1])] + header
        s = np.hstack([t, s])
    np.savetxt(path, s, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
