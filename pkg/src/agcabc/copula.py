"""Semi-parametric Gaussian copula: KDE marginals coupled by a latent correlation.

``Phi`` and ``Phi^-1`` are scipy's ``ndtr``/``ndtri`` (Cephes rational
approximations, accurate to double precision).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special, stats

from ._numerics import newton_invert
from .core import SeedLike, make_rng

__all__ = [
    "KdeMarginal",
    "GaussianCopulaModel",
    "silverman_bandwidth",
    "fit_kde",
    "latentize",
    "repair_correlation",
    "fit_copula",
    "copula_density",
    "copula_sample",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_U_CLIP = 1e-12
_MIN_EIG = 1e-8
_BLOCK = 4_000_000
_TABLE_NODES = 8193


def _solve_cells(f, df, target, t0, lo, hi, iters=30):
    """Monotone root solve of ``f(t) = target`` on ``[lo, hi]`` (all queries at once)."""
    t = t0.copy()
    for _ in range(iters):
        val = f(t, None) - target
        lo = np.where(val < 0, t, lo)
        hi = np.where(val >= 0, t, hi)
        step = val / np.maximum(df(t, None), 1e-300)
        t_new = t - step
        bad = ~((t_new > lo) & (t_new < hi))
        t_new = np.where(bad, 0.5 * (lo + hi), t_new)
        if np.max(np.abs(t_new - t)) < 1e-13:
            return t_new
        t = t_new
    return t


def silverman_bandwidth(x) -> float:
    """``0.9 * min(std, IQR / 1.34) * n^(-1/5)``, falling back to ``std`` if the IQR is zero."""
    x = np.asarray(x, dtype=float)
    std = x.std()
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True)
class KdeMarginal:
    """One-dimensional Gaussian-kernel density estimate."""

    support: np.ndarray
    bandwidth: float

    def __post_init__(self):
        support = np.sort(np.asarray(self.support, dtype=float).ravel())
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    def _apply(self, x, kernel):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.size)
        step = max(1, _BLOCK // self.support.size)
        for start in range(0, flat.size, step):
            chunk = flat[start : start + step]
            scaled = (chunk[:, None] - self.support[None, :]) / self.bandwidth
            out[start : start + step] = kernel(scaled).mean(axis=1)
        return out.reshape(x.shape)

    def pdf(self, x) -> np.ndarray:
        return self._apply(x, lambda t: np.exp(-0.5 * t * t - _LOG_SQRT_2PI)) / self.bandwidth

    def logpdf(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def cdf(self, x) -> np.ndarray:
        return self._apply(x, special.ndtr)

    @cached_property
    def _table(self):
        lo = self.support[0] - 10.0 * self.bandwidth
        hi = self.support[-1] + 10.0 * self.bandwidth
        nodes = np.linspace(lo, hi, _TABLE_NODES)
        return nodes, self.cdf(nodes), self.pdf(nodes)

    def _bracket(self, u):
        nodes, table, dens = self._table
        i = np.clip(np.searchsorted(table, u) - 1, 0, nodes.size - 2)
        return nodes, table, dens, i

    def ppf(self, u) -> np.ndarray:
        """Inverse CDF from a cubic Hermite interpolant of the exact CDF.

        The CDF and density are tabulated once on a dense node grid; within a
        cell the cubic is inverted by safeguarded Newton steps. Absolute
        errors in the CDF are of order 1e-12 for typical sample sizes; use
        :meth:`ppf_exact` to polish against the exact KDE. ``u`` is clipped
        to ``[1e-12, 1 - 1e-12]``.
        """
        u = np.clip(np.asarray(u, dtype=float), _U_CLIP, 1.0 - _U_CLIP)
        shape = u.shape
        u = u.ravel()
        nodes, table, dens, i = self._bracket(u)
        dx = nodes[1] - nodes[0]
        f0, f1 = table[i], table[i + 1]
        d0, d1 = dens[i] * dx, dens[i + 1] * dx

        def cubic(t, _):
            t2, t3 = t * t, t * t * t
            return (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * f1 + (t3 - t2) * d1

        def slope(t, _):
            t2 = t * t
            return (6 * t2 - 6 * t) * f0 + (3 * t2 - 4 * t + 1) * d0 + (6 * t - 6 * t2) * f1 + (3 * t2 - 2 * t) * d1

        width = np.maximum(f1 - f0, 1e-300)
        t0 = np.clip((u - f0) / width, 0.0, 1.0)
        zeros, ones = np.zeros_like(u), np.ones_like(u)
        # cubic/slope close over the per-query cell arrays, so solve them as one batch
        t = _solve_cells(cubic, slope, u, t0, zeros, ones)
        return (nodes[i] + t * dx).reshape(shape)

    def ppf_exact(self, u, tol: float = 1e-10) -> np.ndarray:
        """Inverse CDF solved against the exact KDE CDF to ``tol``."""
        u = np.clip(np.asarray(u, dtype=float), _U_CLIP, 1.0 - _U_CLIP)
        shape = u.shape
        u = u.ravel()
        nodes, table, _, i = self._bracket(u)
        lo = np.where(table[i] <= u, nodes[i], nodes[0] - 30.0 * self.bandwidth)
        hi = np.where(table[i + 1] >= u, nodes[i + 1], nodes[-1] + 30.0 * self.bandwidth)
        x0 = np.clip(self.ppf(u), lo, hi)
        x = newton_invert(
            lambda x, _: self.cdf(x), lambda x, _: self.pdf(x), u, np.zeros_like(u), lo, hi, x0, tol=tol
        )
        return x.reshape(shape)

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "KdeMarginal":
        return cls(d["support"], d["bandwidth"])


def fit_kde(samples) -> KdeMarginal:
    """Gaussian KDE with Silverman's bandwidth."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if np.ptp(x) == 0:
        raise ValueError("all samples are identical; bandwidth would be zero")
    return KdeMarginal(x, silverman_bandwidth(x))


def repair_correlation(c) -> np.ndarray:
    """Nearest-ish valid correlation matrix: symmetric, unit diagonal, eigenvalues >= 1e-8.

    The matrix is first rescaled to unit diagonal; negative or tiny
    eigenvalues are then clipped and the diagonal renormalized, repeatedly
    until the smallest eigenvalue clears the floor.
    """
    c = np.asarray(c, dtype=float)
    c = 0.5 * (c + c.T)
    d = np.sqrt(np.clip(np.diag(c), 1e-300, None))
    c = c / np.outer(d, d)
    for _ in range(100):
        np.fill_diagonal(c, 1.0)
        w, v = np.linalg.eigh(c)
        if w.min() >= _MIN_EIG:
            break
        c = (v * np.maximum(w, 2.0 * _MIN_EIG)) @ v.T
        c = 0.5 * (c + c.T)
        d = np.sqrt(np.diag(c))
        c = c / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return c


def latentize(samples) -> tuple[np.ndarray, np.ndarray]:
    """Normal scores ``z = Phi^-1(rank / (n + 1))`` and their repaired second-moment matrix.

    Ties share their average rank. Returns ``(z, correlation)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least three samples")
    z = special.ndtri(stats.rankdata(x, axis=0) / (n + 1.0))
    lam = repair_correlation(z.T @ z / n)
    return z, lam


@dataclass(frozen=True)
class GaussianCopulaModel:
    marginals: tuple
    correlation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        lam = np.atleast_2d(np.asarray(self.correlation, dtype=float))
        if lam.shape != (len(self.marginals),) * 2:
            raise ValueError("correlation shape does not match the number of marginals")
        object.__setattr__(self, "correlation", lam)
        object.__setattr__(self, "_chol", np.linalg.cholesky(lam))
        object.__setattr__(self, "_prec_minus_eye", np.linalg.inv(lam) - np.eye(lam.shape[0]))
        object.__setattr__(self, "_logdet", 2.0 * np.sum(np.log(np.diag(self._chol))))

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def _log_copula(self, z):
        quad = np.einsum("...i,ij,...j->...", z, self._prec_minus_eye, z)
        return -0.5 * self._logdet - 0.5 * quad

    def latent(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        u = np.column_stack([m.cdf(theta[:, k]) for k, m in enumerate(self.marginals)])
        return special.ndtri(np.clip(u, _U_CLIP, 1.0 - _U_CLIP))

    def log_density(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        log_f = sum(m.logpdf(theta[:, k]) for k, m in enumerate(self.marginals))
        return self._log_copula(self.latent(theta)) + log_f

    def density(self, theta) -> np.ndarray:
        return np.exp(self.log_density(theta))

    def log_density_on_axes(self, axes) -> np.ndarray:
        """Log density on the product grid spanned by ``axes`` (array of shape ``len(a_k)...``).

        Marginals are evaluated once per axis value.
        """
        zs, logfs = [], []
        for m, a in zip(self.marginals, axes):
            zs.append(special.ndtri(np.clip(m.cdf(a), _U_CLIP, 1.0 - _U_CLIP)))
            logfs.append(m.logpdf(a))
        mesh_z = np.stack(np.meshgrid(*zs, indexing="ij"), axis=-1)
        log_f = sum(np.meshgrid(*logfs, indexing="ij"))
        return self._log_copula(mesh_z) + log_f

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((count, self.dim)) @ self._chol.T
        u = special.ndtr(z)
        return np.column_stack([m.ppf(u[:, k]) for k, m in enumerate(self.marginals)])

    def to_dict(self) -> dict:
        return {
            "marginals": [m.to_dict() for m in self.marginals],
            "correlation": self.correlation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianCopulaModel":
        return cls([KdeMarginal.from_dict(m) for m in d["marginals"]], d["correlation"])


def fit_copula(samples) -> GaussianCopulaModel:
    """KDE marginal per column plus the normal-scores correlation matrix."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    marginals = [fit_kde(x[:, k]) for k in range(x.shape[1])]
    _, lam = latentize(x)
    return GaussianCopulaModel(marginals, lam)


def copula_density(model: GaussianCopulaModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = model.density(np.atleast_2d(theta))
    return out[0] if theta.ndim == 1 else out


def copula_sample(model: GaussianCopulaModel, count: int, seed: SeedLike) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be at least 1")
    return model.sample(count, make_rng(seed))
