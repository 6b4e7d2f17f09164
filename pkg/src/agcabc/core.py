"""Shared building blocks: priors, standardization, distances and top-k retention.

Parameter points are rows of a ``(n, K)`` float array and summary statistics
rows of a ``(n, D)`` array. All randomness flows through numpy's ``PCG64``
bit generator, seeded from :class:`numpy.random.SeedSequence` so that every
independent task gets its own spawned stream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "RNG_NAME",
    "SeedLike",
    "InsufficientBudgetError",
    "UniformBoxPrior",
    "Standardizer",
    "SimTable",
    "AcceptedSet",
    "seed_sequence",
    "spawn",
    "make_rng",
    "sample_prior",
    "prior_density",
    "fit_standardizer",
    "distances",
    "select_top",
]

RNG_NAME = "numpy.PCG64 (SeedSequence-spawned streams)"

SeedLike = Union[int, np.random.SeedSequence]


class InsufficientBudgetError(ValueError):
    """Raised when a request needs more simulations than are available."""


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def spawn(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    """Derive ``n`` independent child streams from ``seed``.

    The children depend only on ``seed`` (not on how often the parent was
    spawned before), so the same seed always yields the same children.
    """
    ss = seed_sequence(seed)
    return [np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,)) for i in range(n)]


def make_rng(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed)))


@dataclass(frozen=True)
class UniformBoxPrior:
    """Independent uniform prior on an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def bounds(self) -> np.ndarray:
        return np.column_stack([self.lower, self.upper])

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)

    def density(self, theta) -> np.ndarray:
        return np.where(self.contains(theta), 1.0 / self.volume, 0.0)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((count, self.dim))
        return self.lower + u * (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "UniformBoxPrior":
        return cls(d["lower"], d["upper"])


def sample_prior(prior: UniformBoxPrior, count: int, seed: SeedLike) -> np.ndarray:
    """Draw ``count`` points from ``prior``; returns a ``(count, K)`` array."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return prior.sample(count, make_rng(seed))


def prior_density(prior: UniformBoxPrior, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != prior.dim:
        raise ValueError(f"theta has {theta.shape[-1]} entries, prior has {prior.dim}")
    return prior.density(theta)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine map ``(x - mean) / scale``.

    ``degenerate`` marks dimensions that were constant at fit time; their
    scale is pinned to 1.
    """

    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if np.any(scale <= 0):
            raise ValueError("scales must be positive")
        deg = self.degenerate
        deg = np.zeros(mean.shape, dtype=bool) if deg is None else np.asarray(deg, dtype=bool)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "degenerate", deg)

    @property
    def flagged(self) -> bool:
        return bool(self.degenerate.any())

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def inverse(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "degenerate": self.degenerate.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(d["mean"], d["scale"], d.get("degenerate"))


def fit_standardizer(vectors) -> Standardizer:
    """Fit a zero-mean, unit-variance transform (1/n variance convention).

    Constant dimensions get ``scale = 1`` and are reported through
    :attr:`Standardizer.degenerate` plus a ``RuntimeWarning``.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two vectors to fit a standardizer")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    degenerate = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    if degenerate.any():
        warnings.warn(
            f"constant dimensions {np.flatnonzero(degenerate).tolist()} left unscaled",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(degenerate, 1.0, std)
    return Standardizer(mean, scale, degenerate)


@dataclass
class SimTable:
    """Simulated ``(theta, summary)`` pairs in generation order."""

    theta: np.ndarray
    summaries: np.ndarray
    proposal: str = "prior"
    seed: int | None = None
    flags: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.summaries = np.asarray(self.summaries, dtype=float)
        if self.summaries.ndim == 1:
            self.summaries = self.summaries[:, None]
        if self.theta.shape[0] != self.summaries.shape[0]:
            raise ValueError("theta and summaries must have the same number of rows")

    def __len__(self) -> int:
        return self.theta.shape[0]

    def head(self, n: int) -> "SimTable":
        flags = None if self.flags is None else self.flags[:n]
        return SimTable(self.theta[:n], self.summaries[:n], self.proposal, self.seed, flags)


@dataclass
class AcceptedSet:
    """Rows of a :class:`SimTable` retained by distance, closest first."""

    theta: np.ndarray
    summaries: np.ndarray
    distances: np.ndarray
    indices: np.ndarray

    @property
    def epsilon(self) -> float:
        return float(self.distances[-1])

    def __len__(self) -> int:
        return self.theta.shape[0]

    def as_table(self) -> SimTable:
        return SimTable(self.theta, self.summaries, proposal="accepted")


def distances(summaries, s_obs, standardizer: Standardizer | None = None) -> np.ndarray:
    """Euclidean distance of every row of ``summaries`` to ``s_obs``."""
    s = np.asarray(summaries, dtype=float)
    s_obs = np.asarray(s_obs, dtype=float)
    if standardizer is not None:
        s = standardizer.transform(s)
        s_obs = standardizer.transform(s_obs)
    diff = s - s_obs
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def select_top(
    table: SimTable | AcceptedSet,
    s_obs,
    k: int,
    standardizer: Standardizer | None = None,
) -> AcceptedSet:
    """Keep the ``k`` rows whose summaries lie closest to ``s_obs``.

    Ties are broken by generation order. ``standardizer`` (if given) maps the
    summaries into the space where distances are measured.
    """
    n = len(table)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise InsufficientBudgetError(f"asked for {k} rows but the table holds only {n}")
    d = distances(table.summaries, s_obs, standardizer)
    order = np.argsort(d, kind="stable")[:k]
    base = table.indices if isinstance(table, AcceptedSet) else np.arange(n)
    return AcceptedSet(table.theta[order], table.summaries[order], d[order], base[order])
