"""Figure rendering from the solver's documented CSV/JSONL export schemas.

Three figure kinds:
  time-series      columns vs. a time column, optional error band and
                   reference-line column (e.g. contraction.csv: D_mean
                   against the D0 line)
  log-log          scatter + least-squares fit on log axes, annotated with
                   the fitted slope and, when the exponent m is given, the
                   reference slope 2/(m+1) (fracreg.csv)
  bar-of-margins   one bar per verdict margin from verdicts.jsonl or a CSV

Rendering is batch-only and deterministic; re-rendering a spec overwrites
the output with identical bytes (module metadata aside).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import yaml

FIGURE_KINDS = ("time-series", "log-log", "bar-of-margins")


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    output: str
    x: str | None = None
    y: tuple = ()
    yerr: str | None = None
    ref: str | None = None
    m: float | None = None
    bound: str | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; expected one of {FIGURE_KINDS}")
        if not self.inputs:
            raise RenderError("figure spec needs at least one input file")
        if not self.output:
            raise RenderError("figure spec needs an output path")


def load_spec(path) -> FigureSpec:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise RenderError(f"figure spec {path} did not parse to a mapping")
    known = {"kind", "inputs", "output", "x", "y", "yerr", "ref", "m", "bound", "labels"}
    unknown = set(raw) - known
    if unknown:
        raise RenderError(f"unknown figure spec fields: {sorted(unknown)}")
    return FigureSpec(
        kind=raw.get("kind", ""),
        inputs=tuple(raw.get("inputs", ())),
        output=str(raw.get("output", "")),
        x=raw.get("x"),
        y=tuple(raw.get("y", ())),
        yerr=raw.get("yerr"),
        ref=raw.get("ref"),
        m=raw.get("m"),
        bound=raw.get("bound"),
        labels=dict(raw.get("labels", {})),
    )


def read_csv_columns(path) -> dict:
    """Reads the solver's CSV exports: optional leading '#' comment lines
    (carrying the config hash), a header row, float data rows."""
    path = Path(path)
    if not path.exists():
        raise RenderError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise RenderError(f"{path}: empty file")
    header = next(csv.reader([lines[0]]))
    rows = [row for row in csv.reader(lines[1:]) if row]
    if not rows:
        raise RenderError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    return {name: data[:, j] for j, name in enumerate(header)}


def read_margins(path) -> tuple:
    path = Path(path)
    if path.suffix == ".jsonl":
        names, margins = [], []
        for line in path.read_text().splitlines():
            rec = json.loads(line)
            names.append(rec["name"])
            margins.append(float(rec["margin"]))
        if not names:
            raise RenderError(f"{path}: no data rows")
        return names, np.array(margins)
    cols = read_csv_columns(path)
    if "name" in cols and "margin" in cols:
        return [str(v) for v in cols["name"]], cols["margin"]
    if "margin" not in cols:
        raise RenderError(f"{path}: missing column 'margin'")
    return [str(i) for i in range(len(cols["margin"]))], cols["margin"]


def _require(cols: dict, name: str, path) -> np.ndarray:
    if name not in cols:
        raise RenderError(f"{path}: missing column {name!r} (have {sorted(cols)})")
    return cols[name]


def build_figure(spec: FigureSpec):
    """Build the matplotlib figure; returns (fig, meta) where meta records
    fitted values and annotation strings for testing."""
    meta = {"annotations": []}
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=120)

    if spec.kind == "time-series":
        xname = spec.x or "t"
        for path in spec.inputs:
            cols = read_csv_columns(path)
            x = _require(cols, xname, path)
            ynames = spec.y or [c for c in cols if c != xname]
            for yname in ynames:
                y = _require(cols, yname, path)
                ax.plot(x, y, label=yname)
                if spec.yerr and spec.yerr in cols:
                    e = cols[spec.yerr]
                    ax.fill_between(x, y - 3.0 * e, y + 3.0 * e, alpha=0.25, linewidth=0)
            if spec.ref:
                ref = _require(cols, spec.ref, path)
                ax.plot(x, ref, linestyle="--", color="k", label=spec.ref)
        ax.legend(loc="best")

    elif spec.kind == "log-log":
        xname = spec.x or "eps"
        for path in spec.inputs:
            cols = read_csv_columns(path)
            x = _require(cols, xname, path)
            ynames = spec.y or [c for c in cols if c != xname]
            for yname in ynames:
                y = _require(cols, yname, path)
                ax.loglog(x, y, "o-", label=yname)
            good = None
            for yname in ynames:
                y = cols[yname]
                if np.all(y > 0.0) and np.all(x > 0.0):
                    good = (x, y)
                    break
            if good is not None:
                slope = float(np.polyfit(np.log(good[0]), np.log(good[1]), 1)[0])
                meta["slope"] = slope
                note = f"fitted slope {slope:.3f}"
                if spec.m is not None:
                    refslope = 2.0 / (float(spec.m) + 1.0)
                    note += f", reference slope {refslope:.3f}"
                    meta["reference_slope"] = refslope
                    x0 = np.array([good[0][0], good[0][-1]])
                    anchor = good[1][-1]
                    ax.loglog(x0, anchor * (x0 / x0[-1]) ** refslope, ":",
                              color="gray", label=f"slope {refslope:.3f}")
                meta["annotations"].append(note)
                ax.annotate(note, xy=(0.05, 0.92), xycoords="axes fraction", fontsize=9)
            if spec.bound and spec.bound in cols:
                ax.loglog(x, cols[spec.bound], "--", color="k", label=spec.bound)
        ax.legend(loc="lower right")

    else:  # bar-of-margins
        names, margins = [], []
        for path in spec.inputs:
            n, m_ = read_margins(path)
            names.extend(n)
            margins.extend(m_.tolist())
        pos = np.arange(len(names))
        colors = ["tab:green" if m_ >= 0 else "tab:red" for m_ in margins]
        ax.bar(pos, margins, color=colors)
        ax.axhline(0.0, color="k", linewidth=0.8)
        ax.set_xticks(pos)
        ax.set_xticklabels([n[:28] for n in names], rotation=30, ha="right", fontsize=7)
        meta["margins"] = dict(zip(names, margins))

    ax.set_xlabel(spec.labels.get("x", spec.x or ""))
    ax.set_ylabel(spec.labels.get("y", ""))
    if spec.labels.get("title"):
        ax.set_title(spec.labels["title"])
    fig.tight_layout()
    return fig, meta


def render(spec: FigureSpec) -> Path:
    """Render the figure to spec.output; never mutates inputs."""
    fig, _meta = build_figure(spec)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, metadata={"Software": "spmeplots"})
    plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render",
                                     description="render figures from spmelab artifacts")
    parser.add_argument("--spec", required=True, help="figure spec (YAML)")
    args = parser.parse_args(argv)
    try:
        out = render(load_spec(args.spec))
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
