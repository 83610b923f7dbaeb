"""Run configuration, experiment manifests, and reproducibility bookkeeping.

A run is described by a nested block structure (YAML on disk); initial
conditions and noise modes are closed-form expressions over
{x1, x2, u, sin, cos, pi, constants} so oracles stay exact.  The config
hash covers every normalized field; ensemble member i derives its seed as
seed_base XOR splitmix64(i).
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .grid import TorusGrid, GridField
from .nonlinearity import Nonlinearity, nonlinearity_from_config, regularize_A, validate_assumption_A
from .noise import DiffusionCoefficient, mollify_sigma, validate_assumption_noise
from .validation import ValidationReport


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# safe closed-form expressions


_ALLOWED_CALLS = {"sin": np.sin, "cos": np.cos, "abs": np.abs}
_ALLOWED_NAMES = {"pi": math.pi}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant, ast.Load,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def _check_tree(tree: ast.AST, variables: tuple):
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"disallowed syntax {type(node).__name__!r} in expression")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_CALLS:
                raise ConfigError("only sin, cos and abs may be called in expressions")
            if node.keywords:
                raise ConfigError("keyword arguments are not allowed in expressions")
        if isinstance(node, ast.Name):
            if node.id not in _ALLOWED_CALLS and node.id not in _ALLOWED_NAMES and node.id not in variables:
                raise ConfigError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant {node.value!r} in expression")


class Expr:
    """Compiled closed-form expression over a fixed variable set."""

    def __init__(self, text: str, variables: tuple):
        self.text = str(text)
        self.variables = tuple(variables)
        tree = ast.parse(self.text, mode="eval")
        _check_tree(tree, self.variables)
        self._code = compile(tree, "<expr>", "eval")
        self.names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}

    def __call__(self, **values):
        env = dict(_ALLOWED_CALLS)
        env.update(_ALLOWED_NAMES)
        env.update(values)
        return eval(self._code, {"__builtins__": {}}, env)

    def __getstate__(self):
        return {"text": self.text, "variables": self.variables}

    def __setstate__(self, state):
        self.__init__(state["text"], state["variables"])


class ExprMode:
    """A noise mode sigma^k(x, r) from an expression over x1, x2, u."""

    def __init__(self, text: str, d: int):
        self.expr = Expr(text, variables=("x1", "x2", "u")[: d + 1] if d == 2 else ("x1", "u"))
        self.d = int(d)
        self.x_dependent = bool(self.expr.names & {"x1", "x2"})

    def __call__(self, x, r):
        vals = {"u": np.asarray(r, dtype=float)}
        if self.x_dependent:
            vals["x1"] = np.asarray(x[0])
            if self.d == 2:
                vals["x2"] = np.asarray(x[1])
        out = self.expr(**vals)
        return np.asarray(out, dtype=float) * np.ones_like(vals["u"])


class ExprInitial:
    def __init__(self, text: str, d: int):
        names = ("x1", "x2") if d == 2 else ("x1",)
        self.expr = Expr(text, variables=names)
        self.d = int(d)

    def __call__(self, *coords):
        vals = {"x1": coords[0]}
        if self.d == 2:
            vals["x2"] = coords[1]
        return np.asarray(self.expr(**vals), dtype=float) * np.ones_like(np.asarray(coords[0], dtype=float))


# ---------------------------------------------------------------------------
# seed derivation


def splitmix64(i: int) -> int:
    z = (int(i) + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


def derive_seed(base: int, index: int) -> int:
    return (int(base) ^ splitmix64(index)) & 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# run configuration


_DEFAULT_STEPS = 2048


def _as_int(x, what):
    try:
        v = int(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {x!r}")
    return v


@dataclass(frozen=True)
class RunConfig:
    nonlinearity: dict
    diffusion: dict
    initial: dict
    grid: dict
    time: dict
    ensemble: dict
    regularize: bool = True

    # -- normalization and hashing ------------------------------------------

    def normalized(self) -> dict:
        nl = dict(self.nonlinearity)
        nl.setdefault("kind", "power_law")
        nl.setdefault("K", None)
        nl.setdefault("n", None)
        df = dict(self.diffusion)
        df.setdefault("modes", [])
        df.setdefault("K", 1.0)
        df.setdefault("kappa", 0.5)
        df.setdefault("kappa_bar", 1.0)
        df.setdefault("variant", "b")
        df.setdefault("M", len(df["modes"]))
        df.setdefault("mollify_n", None)
        ic = dict(self.initial)
        ic.setdefault("expr", None)
        ic.setdefault("field_file", None)
        ic.setdefault("mollify_n", None)
        gr = dict(self.grid)
        gr.setdefault("d", 1)
        gr.setdefault("N", 128)
        tm = dict(self.time)
        tm.setdefault("T", 0.5)
        tm.setdefault("dt", None)
        tm.setdefault("save_every", 8)
        en = dict(self.ensemble)
        en.setdefault("seed_base", 0)
        en.setdefault("count", 1)
        return {
            "nonlinearity": nl, "diffusion": df, "initial": ic,
            "grid": gr, "time": tm, "ensemble": en, "regularize": bool(self.regularize),
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_time(self, *, T=None, dt=None, save_every=None) -> "RunConfig":
        tm = dict(self.normalized()["time"])
        if T is not None:
            tm["T"] = float(T)
        if dt is not None:
            tm["dt"] = float(dt)
        if save_every is not None:
            tm["save_every"] = int(save_every)
        return replace(self, time=tm)

    # -- derived quantities --------------------------------------------------

    @property
    def T(self) -> float:
        return float(self.normalized()["time"]["T"])

    @property
    def dt(self) -> float:
        tm = self.normalized()["time"]
        return float(tm["dt"]) if tm["dt"] else self.T / _DEFAULT_STEPS

    @property
    def steps(self) -> int:
        return max(0, int(round(self.T / self.dt)))

    @property
    def save_every(self) -> int:
        return max(1, _as_int(self.normalized()["time"]["save_every"], "save_every"))

    @property
    def seed_base(self) -> int:
        return _as_int(self.normalized()["ensemble"]["seed_base"], "seed_base")

    @property
    def ensemble_count(self) -> int:
        return _as_int(self.normalized()["ensemble"]["count"], "ensemble count")

    @property
    def M(self) -> int:
        return _as_int(self.normalized()["diffusion"]["M"], "mode count")

    @property
    def reg_level(self) -> int:
        n = self.normalized()["nonlinearity"]["n"]
        return _as_int(n, "regularization level n") if n else 10

    def seed_for(self, index: int) -> int:
        return derive_seed(self.seed_base, index)

    # -- builders -------------------------------------------------------------

    def build_grid(self) -> TorusGrid:
        gr = self.normalized()["grid"]
        return TorusGrid(d=_as_int(gr["d"], "grid dimension"), N=_as_int(gr["N"], "grid size"))

    def build_base_nonlinearity(self) -> Nonlinearity:
        block = dict(self.normalized()["nonlinearity"])
        block["n"] = None  # regularization applied separately
        return nonlinearity_from_config(block)

    def build_nonlinearity(self) -> Nonlinearity:
        base = self.build_base_nonlinearity()
        if not self.regularize:
            return base
        return regularize_A(base, self.reg_level)

    def build_base_diffusion(self) -> DiffusionCoefficient:
        df = self.normalized()["diffusion"]
        d = self.build_grid().d
        modes = tuple(ExprMode(text, d) for text in df["modes"])
        if len(modes) != int(df["M"]):
            raise ConfigError(f"diffusion block declares M={df['M']} but has {len(modes)} modes")
        return DiffusionCoefficient(
            modes=modes, K=float(df["K"]), kappa=float(df["kappa"]),
            kappa_bar=float(df["kappa_bar"]), variant=str(df["variant"]),
            x_dependent=any(m.x_dependent for m in modes), d=d,
        )

    def build_diffusion(self) -> DiffusionCoefficient:
        base = self.build_base_diffusion()
        if not self.regularize:
            return base
        df = self.normalized()["diffusion"]
        n = _as_int(df["mollify_n"], "mollify_n") if df["mollify_n"] else self.reg_level
        return mollify_sigma(base, n)

    def build_initial(self, grid: Optional[TorusGrid] = None) -> GridField:
        grid = grid or self.build_grid()
        ic = self.normalized()["initial"]
        if ic["expr"]:
            fn = ExprInitial(ic["expr"], grid.d)
            vals = fn(*grid.coords())
            return GridField(grid, vals)
        if ic["field_file"]:
            from .grid import GridField as GF
            from .fieldio import load_field
            d, N, _t, vals = load_field(ic["field_file"])
            if (d, N) != (grid.d, grid.N):
                raise ConfigError(f"field file is {d}d N={N}, config grid is {grid.d}d N={grid.N}")
            return GF(grid, vals)
        raise ConfigError("initial block needs either 'expr' or 'field_file'")

    @property
    def xi_mollify_n(self) -> int:
        ic = self.normalized()["initial"]
        return _as_int(ic["mollify_n"], "mollify_n") if ic["mollify_n"] else self.reg_level

    # -- validation ------------------------------------------------------------

    def validate(self) -> list:
        """Aggregated validator reports; structural errors become report entries."""
        reports = []
        struct = ValidationReport(subject="config structure")
        norm = self.normalized()
        m = norm["nonlinearity"].get("m")
        kind = norm["nonlinearity"].get("kind")
        if kind != "linear":
            ok = m is not None and float(m) > 1.0
            struct.add("m_greater_than_1", ok, (float(m) - 1.0) if m is not None else -1.0, m=m)
        kb = float(norm["diffusion"]["kappa_bar"])
        if kind != "linear" and m is not None and float(m) > 1.0:
            thresh = 1.0 / min(float(m), 2.0)
            struct.add("kappa_bar_range", thresh < kb <= 1.0, kb - thresh,
                       kappa_bar=kb, lower=thresh)
        struct.add("ensemble_nonempty", self.ensemble_count >= 1, self.ensemble_count - 1,
                   count=self.ensemble_count)
        struct.add("time_positive", self.T > 0 and self.dt > 0, min(self.T, self.dt))
        gr = norm["grid"]
        try:
            TorusGrid(d=int(gr["d"]), N=int(gr["N"]))
            struct.add("grid_valid", True, 0.0)
        except ValueError as exc:
            struct.add("grid_valid", False, -1.0, error=str(exc))
        reports.append(struct)
        if struct.passed:
            try:
                reports.append(validate_assumption_A(self.build_base_nonlinearity()))
            except (ValueError, ConfigError) as exc:
                bad = ValidationReport(subject="nonlinearity construction")
                bad.add("constructible", False, -1.0, error=str(exc))
                reports.append(bad)
            try:
                reports.append(validate_assumption_noise(self.build_base_diffusion()))
            except (ValueError, ConfigError) as exc:
                bad = ValidationReport(subject="diffusion construction")
                bad.add("constructible", False, -1.0, error=str(exc))
                reports.append(bad)
        return reports


EXPERIMENT_KINDS = ("solve", "contraction", "entropy", "stability", "fracreg", "attainment", "moments")


@dataclass(frozen=True)
class ExperimentManifest:
    kind: str
    run: RunConfig
    test: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}")

    def normalized(self) -> dict:
        return {"experiment": self.kind, "run": self.run.normalized(), "test": dict(self.test)}

    def config_hash(self) -> str:
        payload = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(payload.encode()).hexdigest()

    def validate(self) -> list:
        return self.run.validate()


def _require(block: dict, what: str) -> dict:
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"{what} block must be a mapping, got {type(block).__name__}")
    return block


def runconfig_from_dict(raw: dict) -> RunConfig:
    raw = _require(raw, "run")
    return RunConfig(
        nonlinearity=_require(raw.get("nonlinearity"), "nonlinearity"),
        diffusion=_require(raw.get("diffusion"), "diffusion"),
        initial=_require(raw.get("initial"), "initial"),
        grid=_require(raw.get("grid"), "grid"),
        time=_require(raw.get("time"), "time"),
        ensemble=_require(raw.get("ensemble"), "ensemble"),
        regularize=bool(raw.get("regularize", True)),
    )


def manifest_from_dict(raw: dict) -> ExperimentManifest:
    if "experiment" not in raw:
        raise ConfigError("manifest is missing the 'experiment' field")
    return ExperimentManifest(
        kind=str(raw["experiment"]),
        run=runconfig_from_dict(raw.get("run", {})),
        test=_require(raw.get("test"), "test"),
    )


def load_manifest(path) -> ExperimentManifest:
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError(f"manifest {path} did not parse to a mapping")
    return manifest_from_dict(raw)


def apply_profile(manifest: ExperimentManifest, profile: str) -> ExperimentManifest:
    """quick: cap ensembles at 8 and coarsen time-stepping 4x, for smoke runs."""
    if profile == "full":
        return manifest
    if profile != "quick":
        raise ConfigError(f"unknown profile {profile!r}")
    run = manifest.run
    en = dict(run.normalized()["ensemble"])
    en["count"] = min(int(en["count"]), 8)
    tm = dict(run.normalized()["time"])
    tm["dt"] = run.dt * 4.0
    quick_run = replace(run, ensemble=en, time=tm)
    return replace(manifest, run=quick_run)
