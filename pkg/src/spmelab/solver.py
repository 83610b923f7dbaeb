"""Semi-implicit integrator for du = lap A_n(u) dt + sum_k sigma_n^k(x, u) dbeta^k
on the periodic grid.

Each step solves u+ - dt lap_h A_n(u+) = u + sum_k sigma_n^k(x, u) dW^k by
damped Newton; the diffusion is treated implicitly (unconditionally stable
for the monotone A_n with a'_n >= 2/n), the noise explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import splu

from .config import RunConfig
from .grid import GridField, TorusGrid, laplacian_values, gradient_norms, lp_norm
from .noise import DiffusionCoefficient, WienerPath, mollify_xi, sample_wiener
from .nonlinearity import Nonlinearity

RECORD_COLUMNS = ("mass", "L1", "L2", "Lmp1", "gradPsi_L1", "gradPsi_L2", "gradA_L2", "dist2_init")
CSV_COLUMNS = ("t", "mass", "L1", "L2", "Lmp1", "gradPsi_L1", "gradPsi_L2")

NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30


class SolverError(RuntimeError):
    pass


class NewtonError(SolverError):
    def __init__(self, msg, residual_norm):
        super().__init__(f"{msg} (residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


def _newton_tol(grid: TorusGrid) -> float:
    return 1e-10 * grid.N ** (grid.d / 2.0)


class _Stepper:
    """Shared Newton machinery; subclasses provide the linear solve."""

    def __init__(self, grid: TorusGrid, nl: Nonlinearity, dt: float):
        self.grid = grid
        self.nl = nl
        self.dt = float(dt)
        self.tol = _newton_tol(grid)
        self.last_residuals: list = []

    def _residual(self, v, rhs):
        return v - self.dt * laplacian_values(self.nl.eval_A(v), self.grid) - rhs

    def implicit_solve(self, rhs: np.ndarray) -> np.ndarray:
        v = rhs.copy()
        res = self._residual(v, rhs)
        rn = float(np.linalg.norm(res))
        if not np.isfinite(rn):
            raise NewtonError("non-finite residual entering Newton", rn)
        path = [rn]
        self.last_residuals = path
        for _ in range(NEWTON_MAX_ITER):
            if rn <= self.tol:
                return v
            a = self.nl.eval_a(v)
            delta = self._solve_linear(a * a, -res)
            alpha = 1.0
            for _ in range(NEWTON_MAX_HALVINGS):
                vt = v + alpha * delta
                rest = self._residual(vt, rhs)
                rtn = float(np.linalg.norm(rest))
                if rtn < rn:
                    v, res, rn = vt, rest, rtn
                    path.append(rn)
                    break
                alpha *= 0.5
            else:
                raise NewtonError("Newton damping stalled", rn)
        if rn <= self.tol:
            return v
        raise NewtonError(f"Newton did not converge in {NEWTON_MAX_ITER} iterations", rn)

    def _solve_linear(self, D, b):
        raise NotImplementedError


class _Stepper1D(_Stepper):
    def __init__(self, grid, nl, dt):
        super().__init__(grid, nl, dt)
        self.c = dt / (grid.h * grid.h)
        N = grid.N
        self._ab = np.empty((3, N))
        self._eye_cols = np.zeros((N, 2))
        self._eye_cols[0, 0] = 1.0
        self._eye_cols[-1, 1] = 1.0

    def _solve_linear(self, D, b):
        # J = I - dt lap_h diag(D): tridiagonal with two periodic corners,
        # solved as banded + rank-2 Woodbury correction.
        c, N = self.c, self.grid.N
        off = -c * D
        ab = self._ab
        ab[0, 0] = 0.0
        ab[0, 1:] = off[1:]
        ab[1, :] = 1.0 + 2.0 * c * D
        ab[2, :-1] = off[:-1]
        ab[2, -1] = 0.0
        rhs = np.column_stack([b, self._eye_cols])
        Y = solve_banded((1, 1), ab, rhs)
        y, Z = Y[:, 0], Y[:, 1:]
        cu, cl = off[N - 1], off[0]     # J[0, N-1], J[N-1, 0]
        S = np.array([
            [1.0 + cu * Z[N - 1, 0], cu * Z[N - 1, 1]],
            [cl * Z[0, 0], 1.0 + cl * Z[0, 1]],
        ])
        t = np.array([cu * y[N - 1], cl * y[0]])
        corr = np.linalg.solve(S, t)
        return y - Z @ corr


class _Stepper2D(_Stepper):
    def __init__(self, grid, nl, dt):
        super().__init__(grid, nl, dt)
        N = grid.N
        n2 = N * N
        idx = np.arange(n2).reshape(N, N)
        rows, cols, vals = [], [], []
        h2 = grid.h * grid.h
        for shift, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
            rows.append(idx.ravel())
            cols.append(np.roll(idx, shift, axis=axis).ravel())
            vals.append(np.full(n2, 1.0 / h2))
        rows.append(idx.ravel())
        cols.append(idx.ravel())
        vals.append(np.full(n2, -4.0 / h2))
        self._L = csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n2, n2))
        self._L.sum_duplicates()
        self._I = identity(n2, format="csr")

    def _solve_linear(self, D, b):
        Ld = self._L.copy()
        Ld.data = Ld.data * D.ravel()[Ld.indices]
        J = (self._I - self.dt * Ld).tocsc()
        sol = splu(J).solve(b.ravel())
        return sol.reshape(self.grid.shape)


def make_stepper(grid: TorusGrid, nl: Nonlinearity, dt: float) -> _Stepper:
    if nl.floor <= 0.0:
        raise SolverError("the implicit step needs a nondegenerate nonlinearity "
                          "(a bounded below); regularize first")
    return _Stepper1D(grid, nl, dt) if grid.d == 1 else _Stepper2D(grid, nl, dt)


def _noise_increment(sc: DiffusionCoefficient, coords, u, dW_row) -> np.ndarray:
    acc = np.zeros_like(u)
    for k, mode in enumerate(sc.modes):
        w = dW_row[k]
        if w != 0.0:
            acc += w * np.asarray(mode(coords, u), dtype=float)
    return acc


def step(state: GridField, dt: float, nl: Nonlinearity, sc: Optional[DiffusionCoefficient],
         dW: Optional[np.ndarray]) -> GridField:
    """One semi-implicit update of the field; deterministic given inputs."""
    grid = state.grid
    stepper = make_stepper(grid, nl, dt)
    rhs = state.values
    if sc is not None and dW is not None:
        rhs = rhs + _noise_increment(sc, grid.coords(), state.values, np.asarray(dW, dtype=float))
    out = stepper.implicit_solve(rhs)
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite values after implicit step")
    return GridField(grid, out)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    grid: TorusGrid
    m: float
    dt: float
    steps: int
    save_every: int
    times: np.ndarray
    records: dict
    fields: Optional[list]
    initial: np.ndarray           # the stepped initial state xi_n
    raw_initial: np.ndarray
    seed: Optional[int]
    config_hash: str
    metadata: dict = field(default_factory=dict)

    @property
    def save_count(self) -> int:
        return len(self.times)

    def record(self, name: str) -> np.ndarray:
        return self.records[name]

    def final_values(self) -> np.ndarray:
        if self.fields:
            return self.fields[-1]
        raise SolverError("trajectory was run without field snapshots")


def _record_row(values, grid, nl, m, xi0):
    gp1, gp2 = gradient_norms(nl.eval_psi(values), grid)
    _, ga2 = gradient_norms(nl.eval_A(values), grid)
    diff = values - xi0
    return (
        float(values.sum() * grid.cell_volume),
        lp_norm(values, grid, 1.0),
        lp_norm(values, grid, 2.0),
        lp_norm(values, grid, m + 1.0),
        gp1,
        gp2,
        ga2,
        float((diff * diff).sum() * grid.cell_volume),
    )


def solve(cfg: RunConfig, *, seed: Optional[int] = None, wiener: Optional[WienerPath] = None,
          save_every: Optional[int] = None, keep_fields: bool = True) -> Trajectory:
    """Integrate one run of the configured problem; bit-reproducible from
    (config, seed).  The initial condition is mollified-truncated at the
    config's level before stepping (skipped in sanity mode)."""
    grid = cfg.build_grid()
    nl = _cached_nonlinearity(cfg)
    sc = _cached_diffusion(cfg)
    xi_raw = cfg.build_initial(grid)
    if cfg.regularize:
        xi0 = mollify_xi(xi_raw, cfg.xi_mollify_n).values
    else:
        xi0 = xi_raw.values.copy()

    dt = cfg.dt
    steps = cfg.steps
    se = int(save_every) if save_every is not None else cfg.save_every
    if seed is None:
        seed = cfg.seed_for(0)
    if wiener is None and cfg.M >= 1:
        wiener = sample_wiener(seed, dt, steps, cfg.M)
    if wiener is not None and (wiener.steps < steps or wiener.M < cfg.M):
        raise SolverError(f"wiener path ({wiener.steps} steps, M={wiener.M}) too short for "
                          f"{steps} steps with M={cfg.M}")

    stepper = make_stepper(grid, nl, dt) if steps > 0 else None
    coords = grid.coords()
    m = nl.m

    n_saves = steps // se + 1
    times = np.empty(n_saves)
    rec = {name: np.empty(n_saves) for name in RECORD_COLUMNS}
    fields = [] if keep_fields else None

    def save(j, t, values):
        times[j] = t
        row = _record_row(values, grid, nl, m, xi0)
        for name, val in zip(RECORD_COLUMNS, row):
            rec[name][j] = val
        if fields is not None:
            fields.append(values.copy())

    u = xi0.copy()
    save(0, 0.0, u)
    j = 1
    noisy = wiener is not None and sc.M >= 1
    for k in range(steps):
        rhs = u + _noise_increment(sc, coords, u, wiener.row(k)) if noisy else u.copy()
        try:
            u = stepper.implicit_solve(rhs)
        except NewtonError as exc:
            raise SolverError(f"step {k + 1} failed: {exc}") from exc
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite field at step {k + 1}")
        if (k + 1) % se == 0:
            save(j, (k + 1) * dt, u)
            j += 1

    return Trajectory(
        grid=grid, m=m, dt=dt, steps=steps, save_every=se, times=times,
        records=rec, fields=fields, initial=xi0, raw_initial=xi_raw.values,
        seed=seed, config_hash=cfg.config_hash(),
        metadata={"n": cfg.reg_level if cfg.regularize else None, "M": cfg.M},
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Documented export schema: a `# config_hash=` comment line, then one
    row per save time with columns t,mass,L1,L2,Lmp1,gradPsi_L1,gradPsi_L2."""
    with open(path, "w", newline="") as fh:
        if traj.config_hash:
            fh.write(f"# config_hash={traj.config_hash}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for j, t in enumerate(traj.times):
            row = [t] + [traj.records[c][j] for c in CSV_COLUMNS[1:]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# per-process caches (regularization tables are deterministic in the config)


_NL_CACHE: dict = {}
_SC_CACHE: dict = {}


def _cached_nonlinearity(cfg: RunConfig) -> Nonlinearity:
    key = (json.dumps(cfg.normalized()["nonlinearity"], sort_keys=True), cfg.regularize, cfg.reg_level)
    if key not in _NL_CACHE:
        _NL_CACHE[key] = cfg.build_nonlinearity()
    return _NL_CACHE[key]


def _cached_diffusion(cfg: RunConfig) -> DiffusionCoefficient:
    norm = cfg.normalized()
    key = (json.dumps(norm["diffusion"], sort_keys=True), norm["grid"]["d"], cfg.regularize, cfg.reg_level)
    if key not in _SC_CACHE:
        _SC_CACHE[key] = cfg.build_diffusion()
    return _SC_CACHE[key]
