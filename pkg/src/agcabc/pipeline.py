"""Inference methods: adaptive Gaussian copula ABC and four classical baselines.

AGC-ABC runs in two phases. The coarse phase spends a fraction ``lam`` of
the budget on prior simulations, regression-adjusts the closest ones and
fits an inflated Gaussian proposal to them. The fine phase simulates from
that proposal, adjusts the closest ``n`` draws again, fits a Gaussian copula
to the adjusted parameters and finally reweights it by ``prior / proposal``.

Seed discipline
---------------
Every method derives its random streams from ``spawn(seed, 8)``. Children
0 and 1 always draw prior parameters and simulate them, so rejection,
regression, NN and GC ABC share their whole prior table with the coarse
phase of AGC-ABC run under the same seed (row ``i`` of a table depends
only on the seed, ``i`` and ``theta_i``). Child 2 seeds regression fits,
child 3 resampling, and child 7 seeds the fine phase of AGC-ABC.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .copula import GaussianCopulaModel, fit_copula
from .core import (
    RNG_NAME,
    InsufficientBudgetError,
    SeedLike,
    Standardizer,
    UniformBoxPrior,
    fit_standardizer,
    make_rng,
    select_top,
    spawn,
)
from .grid import DensityGrid, GridSpec, product_kde_on_grid, silverman_bandwidths
from .regression import (
    MlpSpec,
    RegressionModel,
    adjust,
    adjust_heteroscedastic,
    fit_linear,
    fit_mlp,
    fit_scale_model,
    select_model,
)
from .simulators import BenchmarkModel, simulate_table

__all__ = [
    "GaussianProposal",
    "BudgetPlan",
    "CoarsePhaseResult",
    "WeightedPosterior",
    "KdePosterior",
    "coarse_phase",
    "fine_phase",
    "posterior_density",
    "posterior_sample",
    "run_rejection_abc",
    "run_reg_abc",
    "run_gc_abc",
    "run_nn_abc",
    "run_agc_abc",
    "run_method",
    "METHODS",
    "posterior_from_dict",
]

ARCHIVE_FORMAT = "agcabc.posterior"
ARCHIVE_VERSION = 1
TOP_KEEP = 2000
SIR_OVERSAMPLE = 50
DENSITY_FLOOR = 1e-300

# child-stream indices within spawn(seed, 8)
_DRAWS, _SIMS, _REGRESSION, _RESAMPLE, _FINE = 0, 1, 2, 3, 7


def _streams(seed: SeedLike):
    return spawn(seed, 8)


# ---------------------------------------------------------------------------
# proposal and budget


@dataclass(frozen=True)
class GaussianProposal:
    """Multivariate normal proposal ``N(mean, covariance)``.

    ``alpha`` is the inflation applied to the sample covariance of the
    adjusted coarse-phase draws. ``flags`` records repairs made to the
    covariance.
    """

    mean: np.ndarray
    covariance: np.ndarray
    alpha: float = 1.5
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        chol = np.linalg.cholesky(cov)  # raises LinAlgError unless SPD
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        diff = (theta - self.mean).reshape(-1, self.dim)
        sol = np.linalg.solve(self._chol, diff.T)
        quad = np.sum(sol**2, axis=0)
        out = -0.5 * (quad + self._logdet + self.dim * np.log(2.0 * np.pi))
        return out.reshape(theta.shape[:-1])

    def density(self, theta) -> np.ndarray:
        return np.exp(self.logpdf(theta))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T

    def to_dict(self) -> dict:
        return {
            "type": "gaussian",
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "alpha": self.alpha,
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianProposal":
        return cls(d["mean"], d["covariance"], d.get("alpha", 1.5), dict(d.get("flags", {})))


def _proposal_logpdf(proposal, theta) -> np.ndarray:
    if isinstance(proposal, GaussianProposal):
        return proposal.logpdf(theta)
    with np.errstate(divide="ignore"):
        return np.log(proposal.density(theta))


def _proposal_to_dict(proposal) -> dict:
    if isinstance(proposal, GaussianProposal):
        return proposal.to_dict()
    return {"type": "uniform_box", **proposal.to_dict()}


def _proposal_from_dict(d: dict):
    if d["type"] == "gaussian":
        return GaussianProposal.from_dict(d)
    return UniformBoxPrior.from_dict(d)


@dataclass(frozen=True)
class BudgetPlan:
    """How a total simulation budget ``total`` is split between the phases.

    The coarse phase gets ``ceil(lam * total)`` simulations and keeps
    ``ceil(coarse_keep_frac * lam * total)`` of them; the fine phase gets the
    rest and keeps ``fine_keep``. If the fine phase has fewer than
    ``fine_keep`` simulations, it keeps half of them instead (flagged).
    """

    total: int
    lam: float = 0.2
    coarse_keep_frac: float = 0.2
    fine_keep: int = TOP_KEEP
    min_coarse: int = 50

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie strictly between 0 and 1")
        if not 0.0 < self.coarse_keep_frac <= 1.0:
            raise ValueError("coarse_keep_frac must lie in (0, 1]")
        if self.total < 1 or self.fine_keep < 1:
            raise ValueError("total and fine_keep must be positive")

    @property
    def n_coarse(self) -> int:
        # round() guards against lam * total landing a hair above an integer
        return math.ceil(round(self.lam * self.total, 9))

    @property
    def n_fine(self) -> int:
        # equals floor((1 - lam) * total) since total is an integer
        return self.total - self.n_coarse

    @property
    def coarse_keep(self) -> int:
        return math.ceil(round(self.coarse_keep_frac * self.lam * self.total, 9))

    @property
    def fine_keep_scaled(self) -> bool:
        return self.n_fine < self.fine_keep

    @property
    def effective_fine_keep(self) -> int:
        if self.fine_keep_scaled:
            return max(1, self.n_fine // 2)
        return self.fine_keep

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "lam": self.lam,
            "coarse_keep_frac": self.coarse_keep_frac,
            "fine_keep": self.fine_keep,
            "n_coarse": self.n_coarse,
            "n_fine": self.n_fine,
            "coarse_keep": self.coarse_keep,
            "effective_fine_keep": self.effective_fine_keep,
        }


# ---------------------------------------------------------------------------
# posterior estimates


@dataclass(frozen=True)
class KdePosterior:
    """Sample-based posterior estimate: a product-Gaussian KDE of ``samples``."""

    samples: np.ndarray
    bandwidths: np.ndarray | None = None
    method: str = ""
    n_sims: int = 0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "samples", x)
        h = silverman_bandwidths(x) if self.bandwidths is None else np.asarray(self.bandwidths, dtype=float)
        if not np.all(h > 0):
            raise ValueError("KDE bandwidth is zero: the samples are constant in some dimension")
        object.__setattr__(self, "bandwidths", h)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def bound_samples(self, count: int | None = None, seed: SeedLike = 0) -> np.ndarray:
        """Samples used to set evaluation-grid bounds (the stored samples themselves)."""
        return self.samples

    def sample(self, count: int, seed: SeedLike) -> np.ndarray:
        rng = make_rng(seed)
        idx = rng.integers(0, self.samples.shape[0], count)
        return self.samples[idx] + rng.standard_normal((count, self.dim)) * self.bandwidths

    def on_grid(self, grid: GridSpec) -> DensityGrid:
        return DensityGrid(grid, product_kde_on_grid(self.samples, self.bandwidths, grid))

    def to_dict(self) -> dict:
        return {
            "format": ARCHIVE_FORMAT,
            "version": ARCHIVE_VERSION,
            "type": "kde",
            "method": self.method,
            "n_sims": self.n_sims,
            "samples": self.samples.tolist(),
            "bandwidths": self.bandwidths.tolist(),
            "flags": _jsonable(self.flags),
        }


@dataclass(frozen=True)
class WeightedPosterior:
    """``prior * copula / proposal`` normalized by a grid Riemann sum.

    ``norm_grid`` is the ``30^K`` grid over the prior box intersected with
    the copula's effective support on which ``normalization`` was computed.
    """

    prior: UniformBoxPrior
    proposal: object
    copula: GaussianCopulaModel
    normalization: float
    norm_grid: GridSpec
    method: str = "agc"
    n_sims: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.prior.dim

    def log_unnormalized(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        inside = self.prior.contains(theta)
        out = np.full(theta.shape[0], -np.inf)
        if np.any(inside):
            t = theta[inside]
            log_q = np.maximum(_proposal_logpdf(self.proposal, t), np.log(DENSITY_FLOOR))
            out[inside] = np.log(self.prior.density(t)) + self.copula.log_density(t) - log_q
        return out

    def _log_on_grid(self, grid: GridSpec) -> np.ndarray:
        pts = grid.points()
        log_c = self.copula.log_density_on_axes(grid.axes()).ravel()
        inside = self.prior.contains(pts)
        out = np.full(pts.shape[0], -np.inf)
        log_q = np.maximum(_proposal_logpdf(self.proposal, pts[inside]), np.log(DENSITY_FLOOR))
        out[inside] = np.log(self.prior.density(pts[inside])) + log_c[inside] - log_q
        return out.reshape(grid.shape)

    def density(self, theta) -> np.ndarray:
        return np.exp(self.log_unnormalized(theta)) / self.normalization

    def on_grid(self, grid: GridSpec) -> DensityGrid:
        logv = self._log_on_grid(grid)
        top = np.max(logv)
        if not np.isfinite(top):
            raise ValueError("posterior is zero on every grid point")
        return DensityGrid(grid, np.exp(logv - top))

    def sample(self, count: int, seed: SeedLike) -> np.ndarray:
        return posterior_sample(self, count, seed)

    def bound_samples(self, count: int = TOP_KEEP, seed: SeedLike = 0) -> np.ndarray:
        return posterior_sample(self, count, seed)

    def to_dict(self) -> dict:
        return {
            "format": ARCHIVE_FORMAT,
            "version": ARCHIVE_VERSION,
            "type": "weighted",
            "method": self.method,
            "n_sims": self.n_sims,
            "prior": self.prior.to_dict(),
            "proposal": _proposal_to_dict(self.proposal),
            "copula": self.copula.to_dict(),
            "normalization": self.normalization,
            "norm_grid": self.norm_grid.to_dict(),
            "flags": _jsonable(self.flags),
            "rng": RNG_NAME,
        }


def posterior_from_dict(d: dict):
    """Rebuild a :class:`WeightedPosterior` or :class:`KdePosterior` from its archive."""
    if d.get("format") != ARCHIVE_FORMAT or d.get("version") != ARCHIVE_VERSION:
        raise ValueError("not a version-1 posterior archive")
    if d["type"] == "kde":
        return KdePosterior(d["samples"], d["bandwidths"], d["method"], d["n_sims"], d.get("flags", {}))
    g = d["norm_grid"]
    return WeightedPosterior(
        UniformBoxPrior.from_dict(d["prior"]),
        _proposal_from_dict(d["proposal"]),
        GaussianCopulaModel.from_dict(d["copula"]),
        d["normalization"],
        GridSpec(g["bounds"], g["per_dim"], g["widened"]),
        d["method"],
        d["n_sims"],
        d.get("flags", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _normalization_grid(prior: UniformBoxPrior, copula: GaussianCopulaModel, per_dim: int = 30) -> GridSpec:
    bounds = prior.bounds.copy()
    for k, m in enumerate(copula.marginals):
        lo = m.support[0] - 4.0 * m.bandwidth
        hi = m.support[-1] + 4.0 * m.bandwidth
        bounds[k, 0] = max(bounds[k, 0], lo)
        bounds[k, 1] = min(bounds[k, 1], hi)
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("the fitted copula has no mass inside the prior box")
    return GridSpec(bounds, per_dim)


def make_weighted_posterior(
    prior: UniformBoxPrior, proposal, copula: GaussianCopulaModel, per_dim: int = 30, **meta
) -> WeightedPosterior:
    """Assemble the reweighted posterior and compute its grid normalization."""
    grid = _normalization_grid(prior, copula, per_dim)
    draft = WeightedPosterior(prior, proposal, copula, 1.0, grid, **meta)
    logv = draft._log_on_grid(grid)
    total = float(np.sum(np.exp(logv)) * grid.cell_volume)
    if not total > 0 or not np.isfinite(total):
        raise ValueError("posterior normalization is not a positive finite number")
    return WeightedPosterior(prior, proposal, copula, total, grid, **meta)


def posterior_density(post: WeightedPosterior, theta) -> np.ndarray:
    """Normalized posterior density; zero outside the prior box."""
    theta = np.asarray(theta, dtype=float)
    out = post.density(np.atleast_2d(theta))
    return out[0] if theta.ndim == 1 else out


def posterior_sample(post: WeightedPosterior, count: int, seed: SeedLike) -> np.ndarray:
    """Sampling-importance-resampling from the reweighted copula.

    Draws ``50 * count`` points from the copula, weights them by
    ``prior / proposal`` and resamples ``count`` of them with replacement.
    Warns when the effective sample size of the weights falls below
    ``count``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = make_rng(seed)
    draws = post.copula.sample(SIR_OVERSAMPLE * count, rng)
    logw = np.full(draws.shape[0], -np.inf)
    inside = post.prior.contains(draws)
    if np.any(inside):
        log_q = np.maximum(_proposal_logpdf(post.proposal, draws[inside]), np.log(DENSITY_FLOOR))
        logw[inside] = np.log(post.prior.density(draws[inside])) - log_q
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("all importance weights are zero: the copula puts no draws inside the prior box")
    w = np.exp(logw - top)
    w /= w.sum()
    ess = 1.0 / np.sum(w**2)
    if ess < count:
        warnings.warn(f"importance weights are degenerate (effective sample size {ess:.1f})", RuntimeWarning, stacklevel=2)
    idx = rng.choice(draws.shape[0], size=count, replace=True, p=w)
    return draws[idx]


# ---------------------------------------------------------------------------
# AGC-ABC phases


@dataclass
class CoarsePhaseResult:
    """Everything the coarse phase produced, not only the proposal."""

    proposal: GaussianProposal
    standardizer: Standardizer
    table: object
    accepted: object
    regression: RegressionModel
    adjusted: np.ndarray


def _fit_regression(kind: str, data, spec: MlpSpec, seed) -> RegressionModel:
    if kind == "select":
        return select_model(data, spec, seed)
    if kind == "linear":
        return fit_linear(data)
    if kind == "mlp":
        return fit_mlp(data, spec, seed)
    raise ValueError(f"unknown regression kind {kind!r}")


def _spd_repair(v: np.ndarray) -> tuple[np.ndarray, bool]:
    """Add ``1e-8 * trace / K`` to the diagonal if ``v`` is not numerically SPD."""
    k = v.shape[0]
    try:
        np.linalg.cholesky(v)
        if np.linalg.eigvalsh(v).min() > 1e-12 * max(1.0, np.trace(v) / k):
            return v, False
    except np.linalg.LinAlgError:
        pass
    tr = np.trace(v)
    jitter = 1e-8 * tr / k if tr > 0 else 1e-8
    out = v + jitter * np.eye(k)
    while True:
        try:
            np.linalg.cholesky(out)
            return out, True
        except np.linalg.LinAlgError:
            jitter *= 10.0
            out = v + jitter * np.eye(k)


def coarse_phase(
    model: BenchmarkModel,
    prior: UniformBoxPrior,
    s_obs,
    plan: BudgetPlan,
    seed: SeedLike,
    *,
    spec: MlpSpec = MlpSpec(),
    regression: str = "select",
) -> CoarsePhaseResult:
    """Fit the Gaussian proposal from ``ceil(lam * N)`` prior simulations.

    The regression is trained on the ``m`` closest rows, every row is
    adjusted, and the proposal is ``N(g(s_obs), 1.5 * V_m)`` where ``V_m``
    is the ``1/m`` second moment of the ``m`` closest adjusted rows about
    ``g(s_obs)``.
    """
    n, m = plan.n_coarse, plan.coarse_keep
    if n < plan.min_coarse:
        raise InsufficientBudgetError(f"coarse phase needs at least {plan.min_coarse} simulations, plan gives {n}")
    streams = _streams(seed)
    thetas = prior.sample(n, make_rng(streams[_DRAWS]))
    table = simulate_table(model, thetas, streams[_SIMS], proposal="prior")
    std = fit_standardizer(table.summaries)
    acc = select_top(table, s_obs, m, std)
    g = _fit_regression(regression, acc, spec, streams[_REGRESSION])
    adjusted_all, _ = adjust(g, table, s_obs)
    kept = adjusted_all[acc.indices]
    mu = np.atleast_1d(g.predict(np.asarray(s_obs, dtype=float)))
    diff = kept - mu
    alpha = 1.5
    v = alpha * (diff.T @ diff) / m
    v, repaired = _spd_repair(v)
    flags = {"spd_repair": repaired, "regression": g.kind, "truncated_sims": int(np.sum(table.flags))}
    proposal = GaussianProposal(mu, v, alpha, flags)
    return CoarsePhaseResult(proposal, std, table, acc, g, kept)


def _draw(proposal, count: int, seed) -> np.ndarray:
    return proposal.sample(count, make_rng(seed))


def fine_phase(
    model: BenchmarkModel,
    prior: UniformBoxPrior,
    proposal,
    s_obs,
    plan: BudgetPlan,
    seed: SeedLike,
    *,
    standardizer: Standardizer | None = None,
    spec: MlpSpec = MlpSpec(),
    regression: str = "select",
    n_sims: int | None = None,
    per_dim: int = 30,
    method: str = "agc",
) -> WeightedPosterior:
    """Simulate from ``proposal``, adjust the closest rows and fit the reweighted copula.

    ``n_sims`` defaults to the plan's fine-phase share. ``proposal`` may be
    a :class:`GaussianProposal` or the prior itself. Draws outside the prior
    box stay in the regression but carry zero posterior weight.
    ``standardizer`` defaults to one fitted on this phase's own summaries.
    """
    n = plan.n_fine if n_sims is None else int(n_sims)
    keep = plan.effective_fine_keep if n_sims is None else (plan.fine_keep if n >= plan.fine_keep else max(1, n // 2))
    scaled = keep != plan.fine_keep
    streams = _streams(seed)
    thetas = _draw(proposal, n, streams[_DRAWS])
    table = simulate_table(model, thetas, streams[_SIMS], proposal="gaussian" if isinstance(proposal, GaussianProposal) else "prior")
    std = fit_standardizer(table.summaries) if standardizer is None else standardizer
    acc = select_top(table, s_obs, keep, std)
    g = _fit_regression(regression, acc, spec, streams[_REGRESSION])
    adjusted, _ = adjust(g, acc, s_obs)
    copula = fit_copula(adjusted)
    flags = {
        "fine_keep_scaled": scaled,
        "fine_keep": keep,
        "epsilon": acc.epsilon,
        "regression": g.kind,
        "outside_prior": int(np.sum(~prior.contains(thetas))),
        "truncated_sims": int(np.sum(table.flags)),
    }
    return make_weighted_posterior(prior, proposal, copula, per_dim, method=method, n_sims=n, flags=flags)


def run_agc_abc(
    model: BenchmarkModel,
    prior: UniformBoxPrior,
    s_obs,
    plan: BudgetPlan | int,
    seed: SeedLike,
    *,
    spec: MlpSpec = MlpSpec(),
) -> WeightedPosterior:
    """Coarse phase followed by the fine phase on the remaining budget."""
    plan = plan if isinstance(plan, BudgetPlan) else BudgetPlan(int(plan))
    coarse = coarse_phase(model, prior, s_obs, plan, seed, spec=spec)
    fine_seed = _streams(seed)[_FINE]
    post = fine_phase(
        model, prior, coarse.proposal, s_obs, plan, fine_seed, standardizer=coarse.standardizer, spec=spec
    )
    flags = dict(post.flags)
    flags.update({"coarse_" + k: v for k, v in coarse.proposal.flags.items()})
    flags["budget"] = plan.to_dict()
    return WeightedPosterior(
        post.prior, post.proposal, post.copula, post.normalization, post.norm_grid, "agc", plan.total, flags
    )


# ---------------------------------------------------------------------------
# baselines


def _prior_table(model, prior, budget: int, seed):
    streams = _streams(seed)
    thetas = prior.sample(budget, make_rng(streams[_DRAWS]))
    return simulate_table(model, thetas, streams[_SIMS], proposal="prior"), streams


def _check_budget(budget: int, keep: int = TOP_KEEP):
    if budget < keep:
        raise InsufficientBudgetError(f"this method keeps the closest {keep} simulations but the budget is {budget}")


def run_rejection_abc(model, prior, s_obs, budget: int, seed: SeedLike, *, keep: int = TOP_KEEP) -> KdePosterior:
    """KDE of the ``keep`` prior draws whose summaries lie closest to ``s_obs``."""
    _check_budget(budget, keep)
    table, _ = _prior_table(model, prior, budget, seed)
    acc = select_top(table, s_obs, keep, fit_standardizer(table.summaries))
    return KdePosterior(acc.theta, method="rej", n_sims=budget, flags={"epsilon": acc.epsilon})


def run_reg_abc(model, prior, s_obs, budget: int, seed: SeedLike, *, keep: int = TOP_KEEP) -> KdePosterior:
    """Linear regression adjustment of the ``keep`` closest prior draws, then KDE."""
    _check_budget(budget, keep)
    table, _ = _prior_table(model, prior, budget, seed)
    acc = select_top(table, s_obs, keep, fit_standardizer(table.summaries))
    g = fit_linear(acc)
    adjusted, _ = adjust(g, acc, s_obs)
    return KdePosterior(adjusted, method="reg", n_sims=budget, flags={"epsilon": acc.epsilon, "ridge": g.flags.get("ridge", False)})


def run_nn_abc(
    model, prior, s_obs, budget: int, seed: SeedLike, *, keep: int = TOP_KEEP, spec: MlpSpec = MlpSpec()
) -> KdePosterior:
    """MLP mean and log-scale regressions on all draws; location-scale adjust of the closest ``keep``."""
    _check_budget(budget, keep)
    table, streams = _prior_table(model, prior, budget, seed)
    std = fit_standardizer(table.summaries)
    mean_seed, scale_seed = spawn(streams[_REGRESSION], 2)
    g = fit_mlp(table, spec, mean_seed)
    sd = fit_scale_model(g, table, spec, scale_seed)
    acc = select_top(table, s_obs, keep, std)
    adjusted, info = adjust_heteroscedastic(g, sd, acc, s_obs)
    return KdePosterior(adjusted, method="nn", n_sims=budget, flags={"epsilon": acc.epsilon, **info})


def run_gc_abc(
    model, prior, s_obs, budget: int, seed: SeedLike, *, keep: int = TOP_KEEP, per_dim: int = 30
) -> WeightedPosterior:
    """Single-phase copula ABC: the fine phase with the prior as proposal and a linear adjustment."""
    _check_budget(budget, keep)
    plan = BudgetPlan(budget, fine_keep=keep)
    return fine_phase(
        model, prior, prior, s_obs, plan, seed, regression="linear", n_sims=budget, per_dim=per_dim, method="gc"
    )


METHODS = {
    "rej": run_rejection_abc,
    "reg": run_reg_abc,
    "nn": run_nn_abc,
    "gc": run_gc_abc,
    "agc": run_agc_abc,
}


def run_method(method: str, model: BenchmarkModel, s_obs, budget: int, seed: SeedLike, **kwargs):
    """Dispatch by method name; returns ``(posterior, wall_time_seconds)``."""
    key = method.lower().replace("-abc", "").replace("_abc", "")
    if key not in METHODS:
        raise KeyError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    start = time.perf_counter()
    post = METHODS[key](model, model.prior, s_obs, budget, seed, **kwargs)
    return post, time.perf_counter() - start
