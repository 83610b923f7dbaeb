"""Diffusion coefficients sigma, their validators and mollification, and
seeded Wiener increments.

A coefficient is a finite family sigma^1..sigma^M of functions of (x, u)
on the torus; modes are callables f(x, r) with x a tuple of coordinate
arrays (one per dimension) broadcasting against r.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridField, TorusGrid
from .kernels import make_mollifier, _gl_nodes
from .validation import ValidationReport


@dataclass(frozen=True)
class DiffusionCoefficient:
    modes: tuple                     # callables f(x, r)
    K: float
    kappa: float = 0.5
    kappa_bar: float = 1.0
    variant: str = "b"               # "a" (x-dependent Hoelder) or "b" (sqrt, x-free)
    x_dependent: bool = False
    d: int = 1

    def __post_init__(self):
        if self.variant not in ("a", "b"):
            raise ValueError(f"variant must be 'a' or 'b', got {self.variant!r}")
        if not 0.0 < self.kappa <= 0.5:
            raise ValueError(f"kappa must lie in (0, 1/2], got {self.kappa}")
        if not 0.0 < self.kappa_bar <= 1.0:
            raise ValueError(f"kappa_bar must lie in (0, 1], got {self.kappa_bar}")

    @property
    def M(self) -> int:
        return len(self.modes)

    def evaluate(self, x, r) -> list:
        return [np.asarray(f(x, r), dtype=float) * np.ones_like(np.asarray(r, dtype=float))
                for f in self.modes]

    def l2_norm(self, x, r) -> np.ndarray:
        vals = self.evaluate(x, r)
        return np.sqrt(sum(v * v for v in vals))


class ConstantMode:
    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, x, r):
        return self.c * np.ones_like(np.asarray(r, dtype=float))


class ScaledIdentityMode:
    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, x, r):
        return self.c * np.asarray(r, dtype=float)


def _torus_dist(x, y) -> np.ndarray:
    """Euclidean distance on the unit torus between coordinate tuples."""
    acc = 0.0
    for xi, yi in zip(x, y):
        diff = np.abs(np.asarray(xi) - np.asarray(yi)) % 1.0
        diff = np.minimum(diff, 1.0 - diff)
        acc = acc + diff * diff
    return np.sqrt(acc)


def _sample_points(d: int):
    xs = np.linspace(0.0, 1.0, 9, endpoint=False)
    if d == 1:
        xpts = [(x,) for x in xs]
    else:
        xpts = [(x, y) for x in xs[::2] for y in xs[::2]]
    rs = np.unique(np.concatenate([
        np.linspace(-4.0, 4.0, 81),
        np.geomspace(1e-4, 4.0, 41),
        -np.geomspace(1e-4, 4.0, 41),
        [0.0],
    ]))
    return xpts, rs


def validate_assumption_noise(sc: DiffusionCoefficient, samples=None) -> ValidationReport:
    """Growth and Hoelder checks on a sample grid, with worst-case witnesses.

    Variant (a): l2 distance <= K|r-zeta|^{1/2+kappa} + K|x-y|^{kappa_bar}
    for |r-zeta| <= 1.  Variant (b): <= |r-zeta|^{1/2} with constant 1 and
    no x dependence.
    """
    if samples is None:
        xpts, rs = _sample_points(sc.d)
    else:
        xpts, rs = samples
    rep = ValidationReport(subject=f"diffusion coefficient (M={sc.M}, variant {sc.variant})")
    rep.add("K_at_least_1", sc.K >= 1.0, sc.K - 1.0, K=sc.K)
    if sc.M == 0:
        # sigma == 0: every bound holds trivially
        rep.add("l2_growth", True, sc.K, modes=0)
        rep.add("holder_in_r", True, 0.0, modes=0)
        rep.add("x_independent" if sc.variant == "b" else "holder_in_x", True, 0.0, modes=0)
        return rep

    worst = np.inf
    witness = {}
    for x in xpts:
        norm = sc.l2_norm(x, rs)
        margin = sc.K * (1.0 + np.abs(rs)) - norm
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst, witness = float(margin[i]), {"x": tuple(map(float, x)), "r": float(rs[i])}
    rep.add("l2_growth", worst >= -1e-12, worst, **witness)

    offsets = np.unique(np.concatenate([np.linspace(-1.0, 1.0, 41), [-1e-3, 1e-3, -0.25, 0.25]]))
    offsets = offsets[offsets != 0.0]
    worst = np.inf
    witness = {}
    x0 = xpts[0]
    for x in xpts:
        base = np.stack(sc.evaluate(x, rs))
        for off in offsets:
            zet = rs + off
            other = np.stack(sc.evaluate(x, zet))
            dist = np.sqrt(((base - other) ** 2).sum(axis=0))
            if sc.variant == "a":
                bound = sc.K * np.abs(off) ** (0.5 + sc.kappa)
            else:
                bound = np.abs(off) ** 0.5
            margin = bound - dist
            i = int(np.argmin(margin))
            if margin[i] < worst:
                worst = float(margin[i])
                witness = {"x": tuple(map(float, x)), "r": float(rs[i]), "zeta": float(zet[i])}
    rep.add("holder_in_r", worst >= -1e-12, worst, **witness)

    if sc.variant == "a":
        worst = np.inf
        witness = {}
        base = np.stack(sc.evaluate(x0, rs))
        for x in xpts[1:]:
            other = np.stack(sc.evaluate(x, rs))
            dist = np.sqrt(((base - other) ** 2).sum(axis=0))
            dx = float(_torus_dist(x0, x))
            margin = sc.K * dx ** sc.kappa_bar - dist
            i = int(np.argmin(margin))
            if margin[i] < worst:
                worst, witness = float(margin[i]), {"x": tuple(map(float, x)), "r": float(rs[i]), "dist_x": dx}
        rep.add("holder_in_x", worst >= -1e-12, worst, **witness)
    else:
        worst = 0.0
        base = np.stack(sc.evaluate(x0, rs))
        for x in xpts[1:]:
            other = np.stack(sc.evaluate(x, rs))
            worst = max(worst, float(np.max(np.abs(base - other))))
        rep.add("x_independent", worst <= 1e-12, 1e-12 - worst, max_dev=worst)
    return rep


class MollifiedMode:
    """rho_{1/n}^{(d+1)} * sigma^k, evaluated by tensorized Gauss-Legendre
    sums against the one-sided kernel in each smoothing direction."""

    def __init__(self, base: Callable, n: int, d: int, x_dependent: bool, order: int = 16):
        self.base = base
        self.n = int(n)
        self.d = int(d)
        self.x_dependent = bool(x_dependent)
        eps = 1.0 / n
        kernel = make_mollifier(eps)
        x, w = _gl_nodes(order)
        s = 0.5 * eps * (x + 1.0)
        W = w * kernel(s) * 0.5 * eps
        W = np.maximum(W, 0.0)
        W /= W.sum()
        self._s = s
        self._W = W

    def __call__(self, x, r):
        r = np.asarray(r, dtype=float)
        if self.x_dependent:
            return self._call_xdep(x, r)
        acc = 0.0
        for sj, wj in zip(self._s, self._W):
            acc = acc + wj * np.asarray(self.base(x, r - sj), dtype=float)
        return acc

    def _call_xdep(self, x, r):
        acc = 0.0
        for sj, wj in zip(self._s, self._W):
            inner = 0.0
            # separable product kernel over the spatial axes
            if self.d == 1:
                for si, wi in zip(self._s, self._W):
                    inner = inner + wi * np.asarray(self.base(((x[0] - si) % 1.0,), r - sj), dtype=float)
            else:
                for si, wi in zip(self._s, self._W):
                    for sk, wk in zip(self._s, self._W):
                        xs = ((x[0] - si) % 1.0, (x[1] - sk) % 1.0)
                        inner = inner + wi * wk * np.asarray(self.base(xs, r - sj), dtype=float)
            acc = acc + wj * inner
        return acc


def mollify_sigma(sc: DiffusionCoefficient, n: int) -> DiffusionCoefficient:
    """Smooth (x, r)-mollification at scale 1/n; keeps validators with 2K."""
    if n < 1:
        raise ValueError("mollification level n must be a positive integer")
    modes = tuple(MollifiedMode(f, n, sc.d, sc.x_dependent) for f in sc.modes)
    return DiffusionCoefficient(modes=modes, K=sc.K, kappa=sc.kappa, kappa_bar=sc.kappa_bar,
                                variant=sc.variant, x_dependent=sc.x_dependent, d=sc.d)


def _axis_kernel_weights(n: int, grid: TorusGrid) -> np.ndarray:
    """Discrete one-sided kernel on grid offsets, normalized to sum 1.
    Degenerates to the identity when 1/n is unresolved at grid scale."""
    eps = 1.0 / n
    J = int(np.floor(eps / grid.h))
    kernel = make_mollifier(eps)
    w = kernel(np.arange(J + 1) * grid.h)
    total = w.sum()
    if total <= 0.0:
        w = np.zeros(1)
        w[0] = 1.0
        return w
    return w / total


def mollify_xi(xi, n: int, grid: TorusGrid | None = None) -> GridField:
    """xi_n = rho_{1/n}^{(d)} * clamp(xi, +-n) on the grid.

    xi may be a GridField or a callable of the grid coordinates (then grid
    must be given).
    """
    if n < 1:
        raise ValueError("mollification level n must be a positive integer")
    if isinstance(xi, GridField):
        g = xi.grid
        vals = xi.values
    else:
        if grid is None:
            raise ValueError("a grid is required to mollify a callable initial condition")
        g = grid
        vals = np.asarray(xi(*g.coords()), dtype=float) * np.ones(g.shape)
    out = np.clip(vals, -float(n), float(n))
    w = _axis_kernel_weights(n, g)
    for ax in range(g.d):
        acc = np.zeros_like(out)
        for j, wj in enumerate(w):
            if wj != 0.0:
                acc += wj * np.roll(out, j, axis=ax)
        out = acc
    return GridField(g, out)


# ---------------------------------------------------------------------------
# Wiener increments


@dataclass(frozen=True)
class WienerPath:
    """Seeded i.i.d. Gaussian(0, dt) increments, steps x M; bit-reproducible."""

    seed: int
    dt: float
    steps: int
    M: int
    increments: np.ndarray = field(repr=False)

    def row(self, k: int) -> np.ndarray:
        return self.increments[k]


def sample_wiener(seed: int, dt: float, steps: int, M: int) -> WienerPath:
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 0 or M < 1:
        raise ValueError(f"need steps >= 0 and M >= 1, got steps={steps}, M={M}")
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    inc = rng.normal(0.0, np.sqrt(dt), size=(steps, M))
    return WienerPath(seed=int(seed), dt=float(dt), steps=int(steps), M=int(M), increments=inc)


_WIENER_HEADER = struct.Struct("<Qdqq")


def dump_wiener(path, wp: WienerPath) -> None:
    """Binary replay file: LE header (u64 seed, f64 dt, i64 steps, i64 M),
    then steps*M little-endian float64 increments, row-major."""
    with open(path, "wb") as fh:
        fh.write(_WIENER_HEADER.pack(wp.seed & 0xFFFFFFFFFFFFFFFF, wp.dt, wp.steps, wp.M))
        fh.write(wp.increments.astype("<f8").tobytes())


def load_wiener(path) -> WienerPath:
    with open(path, "rb") as fh:
        seed, dt, steps, M = _WIENER_HEADER.unpack(fh.read(_WIENER_HEADER.size))
        inc = np.frombuffer(fh.read(8 * steps * M), dtype="<f8").reshape(steps, M).copy()
    return WienerPath(seed=seed, dt=dt, steps=steps, M=M, increments=inc)
