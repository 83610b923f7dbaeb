"""Degenerate diffusion nonlinearities and their derived objects.

A nonlinearity bundles A, a(r) = sqrt(A'(r)), and the transform
Psi(r) = int_0^r a, together with the standing constants (m, K).  The
module also provides the smooth floor-2/n regularization A_n, the
modulus-of-continuity scale eps_n it needs, the coefficient-splitting
radius R_lambda, and the assumption validators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .kernels import symmetric_mollifier_weights
from .validation import ValidationReport


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, msg, achieved_tol):
        super().__init__(f"{msg} (achieved abs tolerance {achieved_tol:.3e})")
        self.achieved_tol = achieved_tol


class RegularizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# concrete function families (module-level classes so instances pickle)


@dataclass(frozen=True)
class _PowerLawFns:
    m: float

    def A(self, r):
        r = np.asarray(r, dtype=float)
        return np.sign(r) * np.abs(r) ** self.m

    def a(self, r):
        r = np.asarray(r, dtype=float)
        return math.sqrt(self.m) * np.abs(r) ** ((self.m - 1.0) / 2.0)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        c = 2.0 * math.sqrt(self.m) / (self.m + 1.0)
        return c * np.sign(r) * np.abs(r) ** ((self.m + 1.0) / 2.0)

    @property
    def floor(self):
        return 0.0


@dataclass(frozen=True)
class _LinearFns:
    def A(self, r):
        return np.asarray(r, dtype=float) + 0.0

    def a(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def psi(self, r):
        return np.asarray(r, dtype=float) + 0.0

    @property
    def floor(self):
        return 1.0


class _TableFns:
    """Monotone interpolation of a sampled (r, A(r)) table.

    A is interpolated by a monotone cubic on the given strictly increasing
    grid and continued linearly outside it; a = sqrt(A') from the
    interpolant's derivative; psi by cumulative quadrature on the knots.
    """

    def __init__(self, r, A):
        r = np.asarray(r, dtype=float)
        A = np.asarray(A, dtype=float)
        if r.ndim != 1 or r.size < 4:
            raise ValueError("tabulated nonlinearity needs at least 4 samples")
        if not np.all(np.diff(r) > 0):
            raise ValueError("tabulated r grid must be strictly increasing")
        if not np.all(np.diff(A) > 0):
            raise ValueError("tabulated A values must be strictly increasing")
        self._r = r
        self._A = A
        self._spline = PchipInterpolator(r, A)
        self._dspline = self._spline.derivative()
        # one-sided slopes for the linear continuation
        self._slope_lo = max(float(self._dspline(r[0])), 0.0)
        self._slope_hi = max(float(self._dspline(r[-1])), 0.0)
        # cumulative Psi on a refined knot grid
        knots = np.unique(np.concatenate([r, np.linspace(r[0], r[-1], 4 * r.size)]))
        vals = self._a_core(knots)
        seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        i0 = int(np.searchsorted(knots, 0.0))
        if i0 >= knots.size or knots[i0] != 0.0:
            # anchor Psi(0) = 0 by interpolation
            base = np.interp(0.0, knots, cum)
        else:
            base = cum[i0]
        self._psi_knots = knots
        self._psi_vals = cum - base

    def _a_core(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self._r[0]) & (r <= self._r[-1])
        d = np.empty_like(r)
        d[inside] = np.maximum(self._dspline(r[inside]), 0.0)
        d[~inside] = np.where(np.asarray(r)[~inside] < self._r[0], self._slope_lo, self._slope_hi)
        return np.sqrt(d)

    def A(self, r):
        r = np.asarray(r, dtype=float)
        lo, hi = self._r[0], self._r[-1]
        core = self._spline(np.clip(r, lo, hi))
        out = np.where(
            r < lo,
            self._A[0] + self._slope_lo * (r - lo),
            np.where(r > hi, self._A[-1] + self._slope_hi * (r - hi), core),
        )
        return out

    def a(self, r):
        return self._a_core(r)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        lo, hi = self._psi_knots[0], self._psi_knots[-1]
        core = np.interp(np.clip(r, lo, hi), self._psi_knots, self._psi_vals)
        return np.where(
            r < lo,
            self._psi_vals[0] + math.sqrt(self._slope_lo) * (r - lo),
            np.where(r > hi, self._psi_vals[-1] + math.sqrt(self._slope_hi) * (r - hi), core),
        )

    @property
    def floor(self):
        return float(np.min(self._a_core(self._psi_knots)))


class _RegularizedFns:
    """Even piecewise-linear table of a_n on |r| knots, with exact
    cumulative integrals for A_n (of a_n^2) and Psi_n (of a_n)."""

    def __init__(self, knots, a_vals, floor):
        self._k = np.asarray(knots, dtype=float)       # increasing, k[0] == 0
        self._a = np.asarray(a_vals, dtype=float)
        self._floor = float(floor)
        dk = np.diff(self._k)
        a0, a1 = self._a[:-1], self._a[1:]
        # int a^2 over each interval (a piecewise linear => a^2 quadratic)
        segA = dk * (a0 * a0 + a0 * a1 + a1 * a1) / 3.0
        segP = dk * (a0 + a1) / 2.0
        self._cumA = np.concatenate([[0.0], np.cumsum(segA)])
        self._cumP = np.concatenate([[0.0], np.cumsum(segP)])
        self._tail_a = float(self._a[-1])

    def a(self, r):
        v = np.abs(np.asarray(r, dtype=float))
        return np.interp(v, self._k, self._a)

    def _cumulative(self, r, cum, power):
        v = np.abs(np.asarray(r, dtype=float))
        idx = np.clip(np.searchsorted(self._k, v, side="right") - 1, 0, self._k.size - 2)
        k0 = self._k[idx]
        a0 = self._a[idx]
        a1 = self._a[idx + 1]
        dk = self._k[idx + 1] - k0
        t = np.where(dk > 0, (np.minimum(v, self._k[-1]) - k0) / np.where(dk > 0, dk, 1.0), 0.0)
        al = a0 + t * (a1 - a0)
        dloc = np.minimum(v, self._k[-1]) - k0
        if power == 2:
            part = dloc * (a0 * a0 + a0 * al + al * al) / 3.0
        else:
            part = dloc * (a0 + al) / 2.0
        out = cum[idx] + part
        tail = np.maximum(v - self._k[-1], 0.0)
        out = out + tail * (self._tail_a ** power)
        return np.sign(np.asarray(r, dtype=float)) * out

    def A(self, r):
        return self._cumulative(r, self._cumA, 2)

    def psi(self, r):
        return self._cumulative(r, self._cumP, 1)

    @property
    def floor(self):
        return self._floor


# ---------------------------------------------------------------------------
# the Nonlinearity bundle


@dataclass(frozen=True)
class Nonlinearity:
    kind: str                 # "power_law" | "linear" | "tabulated" | "regularized"
    m: float
    K: float
    n: Optional[int] = None   # regularization level, set for kind == "regularized"
    fns: object = None
    config: dict = field(default_factory=dict)

    def eval_A(self, r):
        return self.fns.A(r)

    def eval_a(self, r):
        return self.fns.a(r)

    def eval_psi(self, r):
        return self.fns.psi(r)

    @property
    def floor(self) -> float:
        """Certified lower bound for a; 2/n for the regularized kind."""
        return self.fns.floor

    def to_config(self) -> dict:
        return dict(self.config)


def required_K_power_law(m: float) -> float:
    """Smallest K making the power law pass every Assumption-A inequality."""
    p = (m + 1.0) / 2.0
    k_aprime = math.sqrt(m) * (m - 1.0) / 2.0
    k_lower = 1.0 / math.sqrt(m)
    k_psi = (m + 1.0) / (2.0 * math.sqrt(m)) * max(1.0, 2.0 ** (p - 1.0))
    return max(k_aprime, k_lower, k_psi)


def make_power_law(m: float, K: Optional[float] = None) -> Nonlinearity:
    """A(r) = |r|^{m-1} r with a(r) = sqrt(m) |r|^{(m-1)/2}, m > 1."""
    if not m > 1.0:
        raise ValueError(f"power-law exponent must satisfy m > 1, got {m}")
    if K is None:
        K = max(2.0, 1.05 * required_K_power_law(m))
    if K <= 0.0:
        raise ValueError(f"assumption constant K must be positive, got {K}")
    cfg = {"kind": "power_law", "m": float(m), "K": float(K)}
    return Nonlinearity(kind="power_law", m=float(m), K=float(K), fns=_PowerLawFns(m=float(m)), config=cfg)


def linear_nonlinearity(K: float = 2.0, m: float = 2.0) -> Nonlinearity:
    """A(r) = r, a = 1: the nondegenerate sanity mode (declared exponent m)."""
    cfg = {"kind": "linear", "m": float(m), "K": float(K)}
    return Nonlinearity(kind="linear", m=float(m), K=float(K), fns=_LinearFns(), config=cfg)


def tabulated_nonlinearity(r, A, m: float, K: float = 2.0) -> Nonlinearity:
    if not m > 1.0:
        raise ValueError(f"declared exponent must satisfy m > 1, got {m}")
    fns = _TableFns(r, A)
    cfg = {
        "kind": "tabulated",
        "m": float(m),
        "K": float(K),
        "table": {"r": [float(x) for x in np.asarray(r).ravel()],
                  "A": [float(x) for x in np.asarray(A).ravel()]},
    }
    return Nonlinearity(kind="tabulated", m=float(m), K=float(K), fns=fns, config=cfg)


def tabulated_from_csv(path, m: float, K: float = 2.0) -> Nonlinearity:
    """Two-column CSV (r, A(r)) with strictly increasing r."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"expected a two-column CSV, got shape {data.shape}")
    return tabulated_nonlinearity(data[:, 0], data[:, 1], m=m, K=K)


def nonlinearity_from_config(block: dict) -> Nonlinearity:
    kind = block.get("kind")
    K = block.get("K")
    if kind == "power_law":
        nl = make_power_law(block["m"], K=K)
    elif kind == "linear":
        nl = linear_nonlinearity(K=K if K is not None else 2.0, m=block.get("m") or 2.0)
    elif kind == "tabulated":
        if block.get("table"):
            nl = tabulated_nonlinearity(block["table"]["r"], block["table"]["A"],
                                        m=block["m"], K=K if K is not None else 2.0)
        else:
            nl = tabulated_from_csv(block["path"], m=block["m"], K=K if K is not None else 2.0)
    else:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")
    if block.get("n"):
        nl = regularize_A(nl, int(block["n"]))
    return nl


# ---------------------------------------------------------------------------
# Psi and entropy fluxes


_QUAD_TOL = 1e-10


def _quad_checked(g, lo, hi, what):
    val, err = quad(g, lo, hi, epsabs=_QUAD_TOL, epsrel=0.0, limit=200)
    if err > 10.0 * _QUAD_TOL * max(1.0, abs(val)):
        raise QuadratureError(f"quadrature for {what} did not converge", err)
    return val


def eval_Psi(nl: Nonlinearity, r, tol: float = _QUAD_TOL):
    """Psi(r) = int_0^r a; closed form when available, else adaptive quadrature."""
    if nl.fns is not None and hasattr(nl.fns, "psi"):
        return nl.fns.psi(r)
    r_arr = np.asarray(r, dtype=float)
    flat = np.atleast_1d(r_arr).ravel()
    out = np.array([_quad_checked(lambda z: float(nl.eval_a(z)), 0.0, float(x), "Psi") for x in flat])
    return out.reshape(r_arr.shape) if r_arr.ndim else float(out[0])


def eval_Psi_f(nl: Nonlinearity, f: Callable, r):
    """Psi_f(r) = int_0^r f(zeta) a(zeta) dzeta (linear in f, Psi_1 = Psi)."""
    r_arr = np.asarray(r, dtype=float)
    flat = np.atleast_1d(r_arr).ravel()
    out = np.array([
        _quad_checked(lambda z: float(f(z)) * float(nl.eval_a(z)), 0.0, float(x), "Psi_f")
        for x in flat
    ])
    return out.reshape(r_arr.shape) if r_arr.ndim else float(out[0])


class _CumulativeFlux:
    """q(r) = int_0^r g, with per-segment Gauss-Legendre integrals on a graded
    knot set and a C^1 cubic interpolant; q(0) = 0 exactly."""

    def __init__(self, g: Callable, radius: float, refine_scales=()):
        from .kernels import _segment_integrals
        from scipy.interpolate import CubicSpline

        pos = [np.linspace(0.0, radius, 8193), np.geomspace(1e-8, min(1.0, radius), 513)]
        for s in refine_scales:
            if 0.0 < s < radius:
                pos.append(np.linspace(0.0, min(2.0 * s, radius), 1025))
        p = np.unique(np.concatenate([np.concatenate(pos), [0.0]]))
        knots = np.unique(np.concatenate([-p[::-1], p]))
        seg = _segment_integrals(lambda z: np.asarray(g(z), dtype=float), knots)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        i0 = int(np.searchsorted(knots, 0.0))
        self._spline = CubicSpline(knots, cum - cum[i0])
        self._g = g
        self.radius = radius

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(np.abs(r) > self.radius):
            raise ValueError(f"entropy flux evaluated outside its table radius {self.radius}")
        return self._spline(r)


@dataclass(frozen=True)
class EntropyFluxSpec:
    """q_eta with q_eta'(z) = eta'(z) a(z)^2, normalized q_eta(0) = 0."""

    eta: object
    q_eta: Callable

    def __call__(self, r):
        return self.q_eta(r)


def make_q_eta(nl: Nonlinearity, eta, radius: float = 16.0) -> EntropyFluxSpec:
    """Entropy flux paired with eta; eta must expose eval_d1 (eta').

    Plain callables for eta' are also accepted (eta given as (eta, eta')).
    """
    if hasattr(eta, "eval_d1"):
        d1 = eta.eval_d1
        scales = (getattr(eta, "delta", None),)
    elif callable(eta):
        d1 = eta
        scales = ()
    else:
        raise TypeError("eta must expose eval_d1 or be the derivative callable itself")

    def integrand(z):
        a = nl.eval_a(z)
        return d1(z) * a * a

    flux = _CumulativeFlux(integrand, radius, refine_scales=[s for s in scales if s])
    return EntropyFluxSpec(eta=eta, q_eta=flux)


# ---------------------------------------------------------------------------
# Assumption (A) validators


def _default_sample_grid(R: float = 4.0) -> np.ndarray:
    pos = np.unique(np.concatenate([
        np.linspace(0.0, R, 801),
        np.geomspace(1e-6, R, 301),
        [0.5, 1.0, 1.5, 2.0],
    ]))
    return np.unique(np.concatenate([-pos[::-1], pos]))


def validate_assumption_A(nl: Nonlinearity, samples=None) -> ValidationReport:
    """Necessary-condition checks for the structural assumption on A.

    Checked on the sample grid: oddness and strict monotonicity of A,
    |a(0)| <= K, the derivative bound on a away from the origin, the
    lower bound K a(r) >= 1 for |r| >= 1, and the two-regime lower bound
    on K |Psi(r) - Psi(zeta)|.
    """
    r = np.asarray(samples, dtype=float) if samples is not None else _default_sample_grid()
    r = np.unique(r)
    K, m = nl.K, nl.m
    rep = ValidationReport(subject=f"nonlinearity {nl.kind} (m={m}, K={K})")
    rep.add("K_at_least_1", K >= 1.0, K - 1.0, K=K)

    A = nl.eval_A(r)
    odd_err = np.max(np.abs(nl.eval_A(-r) + A))
    scale = max(1.0, float(np.max(np.abs(A))))
    rep.add("A_odd", odd_err <= 1e-12 * scale, 1e-12 * scale - odd_err, max_abs_err=float(odd_err))

    mono = np.diff(A)
    worst_mono = float(np.min(mono)) if mono.size else 0.0
    rep.add("A_strictly_increasing", worst_mono > 0.0, worst_mono,
            at_r=float(r[np.argmin(mono)]) if mono.size else None)

    a0 = float(np.abs(nl.eval_a(0.0)))
    rep.add("a0_bound", a0 <= K, K - a0, a0=a0)

    # |a'(r)| <= K |r|^{(m-3)/2} via central differences, staying away from 0
    rp = r[r > 1e-3]
    if rp.size:
        h = 1e-5 * np.maximum(1.0, rp)
        da = (nl.eval_a(rp + h) - nl.eval_a(rp - h)) / (2.0 * h)
        bound = K * rp ** ((m - 3.0) / 2.0)
        margin = bound * (1.0 + 1e-6) + 1e-9 - np.abs(da)
        i = int(np.argmin(margin))
        rep.add("a_prime_bound", margin[i] >= 0.0, float(margin[i]),
                at_r=float(rp[i]), fd=float(da[i]), bound=float(bound[i]))

    big = r[np.abs(r) >= 1.0]
    if big.size:
        vals = K * nl.eval_a(big) - 1.0
        i = int(np.argmin(vals))
        rep.add("a_lower_bound", vals[i] >= -1e-12, float(vals[i]), at_r=float(big[i]))

    # two-regime lower bound on K |Psi(r) - Psi(zeta)| over sampled pairs
    sub = r[:: max(1, r.size // 256)]
    P = eval_Psi(nl, sub)
    R1, R2 = np.meshgrid(sub, sub, indexing="ij")
    D = K * np.abs(P[:, None] - P[None, :])
    gap = np.abs(R1 - R2)
    outer = np.maximum(np.abs(R1), np.abs(R2)) >= 1.0
    req = np.where(outer, gap, gap ** ((m + 1.0) / 2.0))
    margin = D - req + 1e-10
    mask = gap > 0
    if np.any(mask):
        flat = np.where(mask, margin, np.inf)
        i, j = np.unravel_index(int(np.argmin(flat)), flat.shape)
        rep.add("psi_two_regime", flat[i, j] >= 0.0, float(flat[i, j]),
                r=float(R1[i, j]), zeta=float(R2[i, j]))
    return rep


# ---------------------------------------------------------------------------
# the smooth regularization A_n


_EPS_SCAN_OFFSETS = np.array([-1.0, -2.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def compute_eps_n(nl: Nonlinearity, n: int, *, strict: bool = False) -> float:
    """Largest dyadic eps in (0,1] with |a(r)-a(zeta)| <= 1/n for all sampled
    |r| <= 3n and |zeta - r| <= 3 eps.

    A scan lower bound for the supremum: the window oscillation at each
    sampled r is probed at the window endpoints, interior points, and the
    origin when it falls inside.  Nonincreasing in n for fixed nl.
    """
    if n < 1:
        raise ValueError("regularization level n must be a positive integer")
    hi = 3.0 * n
    grid = np.unique(np.concatenate([
        np.linspace(0.0, hi, 10001),
        np.geomspace(min(1e-10, hi * 1e-12), min(1.0, hi), 2001),
        [0.0],
    ]))
    a_grid = nl.eval_a(grid)
    tol = 1.0 / n + 1e-13
    accepted = None
    for j in range(0, 41):
        eps = 2.0 ** (-j)
        zeta = grid[:, None] + 3.0 * eps * _EPS_SCAN_OFFSETS[None, :]
        osc = np.abs(nl.eval_a(np.abs(zeta)) - a_grid[:, None]).max(axis=1)
        near0 = grid <= 3.0 * eps
        if np.any(near0):
            osc[near0] = np.maximum(osc[near0], np.abs(nl.eval_a(0.0) - a_grid[near0]))
        if float(osc.max()) <= tol:
            accepted = eps
            break
    if accepted is None:
        msg = (f"modulus of continuity of a not resolvable at level n={n}: "
               f"criterion fails at all scanned scales down to 2^-40")
        if strict:
            raise RegularizationError(msg)
        warnings.warn(msg, RuntimeWarning)
        return 2.0 ** (-40)
    return accepted


def _regularized_knots(eps: float, L: float) -> np.ndarray:
    pos = np.unique(np.concatenate([
        np.linspace(0.0, L, 2049),
        np.geomspace(max(eps * 1e-3, 1e-12), L, 4001),
        np.linspace(0.0, min(16.0 * eps, L), 257),
        [0.0, L],
    ]))
    return pos


def regularize_A(nl: Nonlinearity, n: int) -> Nonlinearity:
    """Smooth nondegenerate approximation A_n of A.

    a_n = rho_bar_{eps_n} * (2/n + a(3 eps_n v |r| ^ 3n)) with eps_n from
    compute_eps_n; a_n >= 2/n everywhere and sup_{|r|<=n} |a - a_n| <= 4/n.
    The constant 2/n rides outside the convolution (kernel mass 1), so the
    floor holds exactly.
    """
    if n < 1:
        raise ValueError("regularization level n must be a positive integer")
    if nl.kind == "regularized":
        raise ValueError("refusing to regularize an already regularized nonlinearity")
    rep = validate_assumption_A(nl)
    if not rep.passed:
        names = ", ".join(c.name for c in rep.failures())
        raise RegularizationError(f"base nonlinearity fails Assumption-A validators: {names}")

    eps = compute_eps_n(nl, n, strict=True)
    lo, hi = 3.0 * eps, 3.0 * n
    L = hi + 2.0
    knots = _regularized_knots(eps, L)
    s, W = symmetric_mollifier_weights(eps)
    zeta = np.clip(np.abs(knots[:, None] - s[None, :]), lo, hi)
    a_vals = 2.0 / n + nl.eval_a(zeta) @ W

    fns = _RegularizedFns(knots, a_vals, floor=2.0 / n)

    check = np.linspace(-float(n), float(n), 10001)
    closeness = float(np.max(np.abs(nl.eval_a(check) - fns.a(check))))
    if closeness > 4.0 / n:
        raise RegularizationError(
            f"regularization closeness bound violated: sup |a - a_n| = {closeness:.3e} > 4/n = {4.0 / n:.3e}")

    cfg = dict(nl.config)
    cfg["n"] = int(n)
    return Nonlinearity(kind="regularized", m=nl.m, K=3.0 * nl.K, n=int(n), fns=fns, config=cfg)


# ---------------------------------------------------------------------------
# coefficient-splitting radius


def compute_R_lambda(a: Callable, a_tilde: Callable, lam: float, R_max: float = 100.0,
                     points: int = 100001) -> float:
    """sup of R <= R_max with |a(r) - a_tilde(r)| <= lambda for all scanned
    |r| < R; +inf when the bound holds on the full scan."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    r = np.linspace(0.0, R_max, points)
    d = np.abs(np.asarray(a(r), dtype=float) - np.asarray(a_tilde(r), dtype=float))
    bad = np.nonzero(d > lam)[0]
    if bad.size == 0:
        return math.inf
    return float(r[bad[0]])
