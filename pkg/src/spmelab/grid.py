"""Periodic lattice fields on the unit torus (d = 1 or 2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    d: int
    N: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.d}")
        if self.N < 8:
            raise ValueError(f"grid needs at least 8 points per axis, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self) -> tuple:
        """Coordinate arrays (x1,) or (x1, x2) broadcast to the grid shape."""
        ax = self.axis()
        if self.d == 1:
            return (ax,)
        return tuple(np.meshgrid(ax, ax, indexing="ij"))


@dataclass
class GridField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def lp_norm(self, p: float) -> float:
        return lp_norm(self.values, self.grid, p)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())


def field_from_callable(grid: TorusGrid, fn) -> GridField:
    return GridField(grid, np.asarray(fn(*grid.coords()), dtype=float) * np.ones(grid.shape))


def lp_norm(values: np.ndarray, grid: TorusGrid, p: float) -> float:
    return float((np.abs(values) ** p).sum() * grid.cell_volume) ** (1.0 / p)


def laplacian_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Second-order periodic stencil; annihilates constants, telescopes to zero."""
    h2 = grid.h * grid.h
    out = -2.0 * grid.d * values
    for ax in range(grid.d):
        out = out + np.roll(values, 1, axis=ax) + np.roll(values, -1, axis=ax)
    return out / h2


def discrete_laplacian(f: GridField) -> GridField:
    return GridField(f.grid, laplacian_values(f.values, f.grid))


def forward_gradient(values: np.ndarray, grid: TorusGrid) -> list:
    h = grid.h
    return [(np.roll(values, -1, axis=ax) - values) / h for ax in range(grid.d)]


def gradient_norms(values: np.ndarray, grid: TorusGrid) -> tuple:
    """(L1, L2) norms of the forward-difference gradient magnitude."""
    comps = forward_gradient(values, grid)
    mag2 = sum(c * c for c in comps)
    vol = grid.cell_volume
    l1 = float(np.sqrt(mag2).sum() * vol)
    l2 = float(np.sqrt(mag2.sum() * vol))
    return l1, l2


def grad_Psi_norms(f: GridField, nl) -> tuple:
    """Discrete (L1, L2) norms of grad Psi(u) for the dissipation records."""
    psi = nl.eval_psi(f.values)
    return gradient_norms(psi, f.grid)
