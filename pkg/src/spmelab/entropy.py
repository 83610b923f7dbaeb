"""Convex entropy families eta_delta regularizing |r|.

Both families have eta(0) = eta'(0) = 0 and compactly supported,
nonnegative eta''.  The standard family takes eta''(r) = rho_delta(|r|);
the logarithmic family spreads eta'' as ~1/(r |log delta|) over
[delta^2, delta], trading the 2/delta sup bound for the pair
|eta''(r) r| <= 2/|log delta| and |eta''| <= delta^-2/|log delta|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import (
    make_mollifier,
    unit_bump,
    unit_bump_cdf,
    unit_bump_cdf_integral,
    _gl_nodes,
)


class _StandardEta:
    def __init__(self, delta: float):
        self.delta = float(delta)

    def eval_d2(self, r):
        r = np.asarray(r, dtype=float)
        return unit_bump(np.abs(r) / self.delta) / self.delta

    def eval_d1(self, r):
        r = np.asarray(r, dtype=float)
        return np.sign(r) * unit_bump_cdf(np.abs(r) / self.delta)

    def eval(self, r):
        r = np.asarray(r, dtype=float)
        t = np.abs(r) / self.delta
        return self.delta * unit_bump_cdf_integral(np.minimum(t, 1.0)) + np.maximum(np.abs(r) - self.delta, 0.0)


class _LogEta:
    """eta''(|r|) = int rho_eps(s) w(|r| + s) ds with eps = delta^2/4 and
    w = 1/(zeta |log delta|) on [delta^2, delta]; the reflected kernel keeps
    the support inside (0, delta) and the sup below delta^-2/|log delta|."""

    def __init__(self, delta: float):
        self.delta = float(delta)
        self._eps = delta * delta / 4.0
        self._lo = delta * delta
        self._hi = delta
        self._logd = abs(math.log(delta))
        self._kernel = make_mollifier(self._eps)
        # cumulative tables for eta' and eta on a graded grid of |r|
        supp_lo = self._lo - self._eps          # = 3 delta^2 / 4
        v = np.unique(np.concatenate([
            [0.0, 0.5 * supp_lo],
            np.geomspace(0.5 * supp_lo, self._hi, 6001),
            [self._hi, 1.5 * self._hi],
        ]))
        d2 = self._d2_abs(v)
        seg = 0.5 * (d2[1:] + d2[:-1]) * np.diff(v)
        d1 = np.concatenate([[0.0], np.cumsum(seg)])
        d1 /= d1[-1]                             # unit mass on (0, inf), exact in the continuum
        seg1 = 0.5 * (d1[1:] + d1[:-1]) * np.diff(v)
        e = np.concatenate([[0.0], np.cumsum(seg1)])
        self._v = v
        self._d1 = d1
        self._e = e

    def _d2_abs(self, v):
        v = np.asarray(v, dtype=float)
        slo = np.maximum(0.0, self._lo - v)
        shi = np.minimum(self._eps, self._hi - v)
        half = np.maximum(0.0, 0.5 * (shi - slo))
        mid = 0.5 * (shi + slo)
        x, w = _gl_nodes(24)
        s = mid[..., None] + half[..., None] * x
        vals = self._kernel(s.ravel()).reshape(s.shape) / (v[..., None] + s)
        return (half * (vals @ w)) / self._logd

    def eval_d2(self, r):
        return self._d2_abs(np.abs(np.asarray(r, dtype=float)))

    def eval_d1(self, r):
        r = np.asarray(r, dtype=float)
        v = np.abs(r)
        core = np.interp(v, self._v, self._d1)
        return np.sign(r) * np.where(v >= self._v[-1], 1.0, core)

    def eval(self, r):
        r = np.asarray(r, dtype=float)
        v = np.abs(r)
        core = np.interp(v, self._v, self._e)
        tail = self._e[-1] + (v - self._v[-1])
        return np.where(v >= self._v[-1], tail, core)


class _LinearEta:
    def __init__(self, sign: float):
        self.sign = float(sign)

    def eval(self, r):
        return self.sign * np.asarray(r, dtype=float)

    def eval_d1(self, r):
        return self.sign * np.ones_like(np.asarray(r, dtype=float))

    def eval_d2(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class EntropyFunction:
    """eta_delta with its first two derivatives; immutable and shareable."""

    family: str                  # "standard" | "logarithmic" | "linear"
    delta: float | None
    impl: object

    def eval(self, r):
        return self.impl.eval(r)

    def eval_d1(self, r):
        return self.impl.eval_d1(r)

    def eval_d2(self, r):
        return self.impl.eval_d2(r)


def make_standard_eta(delta: float) -> EntropyFunction:
    """eta''_delta(r) = rho_delta(|r|); |eta_delta(r) - |r|| <= delta,
    supp eta'' in [-delta, delta], mass <= 2, |eta''| <= 2/delta."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return EntropyFunction(family="standard", delta=float(delta), impl=_StandardEta(delta))


def make_log_eta(delta: float) -> EntropyFunction:
    """Logarithmic family; requires delta < 1/2 so |log delta| > log 2."""
    if not 0.0 < delta < 0.5:
        raise ValueError(f"logarithmic family needs delta in (0, 1/2), got {delta}")
    return EntropyFunction(family="logarithmic", delta=float(delta), impl=_LogEta(delta))


def linear_eta(sign: int = 1) -> EntropyFunction:
    """eta(r) = +-r; turns the entropy inequality into the weak-form identity."""
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    return EntropyFunction(family="linear", delta=None, impl=_LinearEta(sign))
