"""Evaluation grids and normalized densities on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridSpec", "DensityGrid", "silverman_bandwidths", "product_kde_on_grid"]


@dataclass(frozen=True)
class GridSpec:
    """Product grid of ``per_dim`` cell centres per axis inside ``bounds``."""

    bounds: np.ndarray
    per_dim: int = 30
    widened: bool = False

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if bounds.shape[1] != 2:
            raise ValueError("bounds must have shape (K, 2)")
        if self.per_dim < 2:
            raise ValueError("per_dim must be at least 2")
        if not np.all(np.isfinite(bounds)) or not np.all(bounds[:, 0] < bounds[:, 1]):
            raise ValueError("bounds must be finite with lower < upper")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.per_dim**self.dim

    @property
    def steps(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / self.per_dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    def axes(self) -> list[np.ndarray]:
        j = np.arange(self.per_dim) + 0.5
        return [lo + j * step for (lo, _), step in zip(self.bounds, self.steps)]

    def points(self) -> np.ndarray:
        """All grid points as a ``(per_dim**K, K)`` array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def same_as(self, other: "GridSpec") -> bool:
        # bounds rebuilt from written coordinates can differ in the last ulp
        return (
            self.per_dim == other.per_dim
            and self.bounds.shape == other.bounds.shape
            and np.allclose(self.bounds, other.bounds, rtol=1e-12, atol=1e-300)
        )

    def to_dict(self) -> dict:
        return {"bounds": self.bounds.tolist(), "per_dim": self.per_dim, "widened": self.widened}


@dataclass(frozen=True)
class DensityGrid:
    """Non-negative grid values renormalized to sum to one."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and non-negative")
        total = v.sum()
        if total <= 0:
            raise ValueError("density is zero everywhere on the grid")
        object.__setattr__(self, "values", v / total)

    def points(self) -> np.ndarray:
        return self.grid.points()

    def density(self) -> np.ndarray:
        """Values rescaled to a density (mass per unit volume)."""
        return self.values / self.grid.cell_volume

    def mode(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(self.values), self.values.shape)
        return np.array([ax[i] for ax, i in zip(self.grid.axes(), idx)])

    def mean(self) -> np.ndarray:
        pts = self.points()
        return self.values.ravel() @ pts


def silverman_bandwidths(samples) -> np.ndarray:
    """Per-column Silverman bandwidth ``0.9 * min(std, IQR / 1.34) * n^(-1/5)``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    std = x.std(axis=0)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    spread = np.minimum(std, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, std)
    return 0.9 * spread * x.shape[0] ** (-0.2)


def product_kde_on_grid(samples, bandwidths, grid: GridSpec, chunk: int = 20_000) -> np.ndarray:
    """Unnormalized product-Gaussian-kernel KDE on every point of ``grid``.

    The kernel factorizes over dimensions, so the sum over samples is a chain
    of matrix products of the per-axis kernel matrices. Returns an array of
    shape ``grid.shape`` (normalization constants are dropped).
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    h = np.asarray(bandwidths, dtype=float)
    if x.shape[1] != grid.dim or h.shape != (grid.dim,):
        raise ValueError("samples, bandwidths and grid disagree on the dimension")
    if not np.all(h > 0):
        raise ValueError("bandwidths must be positive")
    axes = grid.axes()
    out = np.zeros(grid.size)
    for start in range(0, x.shape[0], chunk):
        block = x[start : start + chunk]
        mats = [np.exp(-0.5 * ((a[:, None] - block[None, :, k]) / h[k]) ** 2) for k, a in enumerate(axes)]
        lead = mats[0]
        for m in mats[1:-1]:
            lead = (lead[:, None, :] * m[None, :, :]).reshape(-1, block.shape[0])
        out += (lead @ mats[-1].T).ravel() if grid.dim > 1 else lead.sum(axis=1)
    return out.reshape(grid.shape)
