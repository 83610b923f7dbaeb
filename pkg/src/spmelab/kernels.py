"""Mollifier kernels on the line.

The base kernel rho is a smooth bump supported in (0, 1), bounded by 2,
with unit mass.  rho_theta(r) = rho(r/theta)/theta concentrates it on
(0, theta).  The symmetric kernel rho_bar_eps (self-convolution of
rho_eps) is supported on [-eps, eps] and drives the coefficient
regularization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

# Flattening exponent of the bump: exp(-q / (s(1-s))).  q = 1/4 keeps the
# mass-1 normalization below the required pointwise bound of 2 (the plain
# q = 1 bump normalizes to a peak of ~2.6).
_BUMP_Q = 0.25


def _bump_raw(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    out[inside] = np.exp(-_BUMP_Q / (si * (1.0 - si)))
    return out


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    val, err = quad(lambda s: float(_bump_raw(s)), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return val


def unit_bump(s):
    """The normalized base kernel: support (0,1), mass 1, max < 2."""
    return _bump_raw(s) / _bump_mass()


def _gl_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _segment_integrals(f: Callable, knots: np.ndarray, order: int = 10) -> np.ndarray:
    """Gauss-Legendre integral of f over each knot interval, vectorized."""
    x, w = _gl_nodes(order)
    a = knots[:-1]
    b = knots[1:]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    return half * (vals @ w)


@lru_cache(maxsize=1)
def _unit_bump_cdf_spline() -> CubicSpline:
    knots = np.linspace(0.0, 1.0, 1025)
    seg = _segment_integrals(unit_bump, knots)
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    return CubicSpline(knots, cdf)


def unit_bump_cdf(t):
    """P(t) = integral of the unit bump over [0, t], clamped to [0, 1]."""
    t = np.asarray(t, dtype=float)
    y = _unit_bump_cdf_spline()(np.clip(t, 0.0, 1.0))
    out = np.clip(y, 0.0, 1.0)
    return np.where(t >= 1.0, 1.0, np.where(t <= 0.0, 0.0, out))


@lru_cache(maxsize=1)
def _unit_bump_cdf_integral_spline() -> CubicSpline:
    knots = np.linspace(0.0, 1.0, 1025)
    seg = _segment_integrals(lambda s: unit_bump_cdf(s), knots)
    q = np.concatenate([[0.0], np.cumsum(seg)])
    return CubicSpline(knots, q)


def unit_bump_cdf_integral(t):
    """Q(t) = integral of P over [0, t] for t in [0, 1]; extends linearly past 1."""
    t = np.asarray(t, dtype=float)
    spl = _unit_bump_cdf_integral_spline()
    q1 = float(spl(1.0))
    core = spl(np.clip(t, 0.0, 1.0))
    return np.where(t >= 1.0, q1 + (t - 1.0), np.where(t <= 0.0, 0.0, core))


@dataclass(frozen=True)
class MollifierKernel:
    """rho_theta: nonnegative, supported in (0, theta), unit mass, <= 2/theta."""

    theta: float
    _eval: Callable = field(repr=False)

    def __post_init__(self):
        if not self.theta > 0.0:
            raise ValueError(f"kernel width must be positive, got {self.theta}")

    def __call__(self, r):
        return self._eval(r)

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, self.theta)


def make_mollifier(theta: float) -> MollifierKernel:
    """rho_theta(r) = rho(r/theta)/theta."""
    if not theta > 0.0:
        raise ValueError(f"kernel width must be positive, got {theta}")

    def _eval(r, _theta=float(theta)):
        return unit_bump(np.asarray(r, dtype=float) / _theta) / _theta

    return MollifierKernel(theta=float(theta), _eval=_eval)


@lru_cache(maxsize=1)
def _selfconv_spline() -> CubicSpline:
    # rho_bar(v) = int rho(v+s) rho(s) ds, tabulated on [0, 1] (rho_bar is
    # even); the integrand lives on the overlap [0, 1 - v].
    knots = np.linspace(0.0, 1.0, 4097)
    x, w = _gl_nodes(32)
    hi = 1.0 - knots
    half = np.maximum(0.0, 0.5 * hi)
    mid = 0.5 * hi
    s = mid[:, None] + half[:, None] * x[None, :]
    vals = unit_bump(s.ravel()).reshape(s.shape) * unit_bump((knots[:, None] + s).ravel()).reshape(s.shape)
    y = half * (vals @ w)
    y[-1] = 0.0
    return CubicSpline(knots, y)


def symmetric_bump(v):
    """Self-convolution of the unit bump: even, supported on [-1, 1], mass 1."""
    v = np.abs(np.asarray(v, dtype=float))
    core = np.maximum(_selfconv_spline()(np.clip(v, 0.0, 1.0)), 0.0)
    return np.where(v >= 1.0, 0.0, core)


def symmetric_mollifier_weights(eps: float, order: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for convolving against rho_bar_eps.

    Returns (s, W) with sum(W) == 1 so that (rho_bar_eps * f)(r) is
    approximated by sum_i W_i f(r - s_i) with nonnegative weights.
    """
    x, w = _gl_nodes(order)
    s = eps * x
    W = w * symmetric_bump(x)
    W = np.maximum(W, 0.0)
    W /= W.sum()
    return s, W
