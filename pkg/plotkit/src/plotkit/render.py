"""Figure rendering for experiment CSV files.

Three plot kinds:

* ``scaling``     -- log-log minimal query budget vs dimension from sweep
                     rows, with the fitted exponent annotated (re-fitted here
                     from the rows as a cross-check of the driver's summary),
* ``histogram``   -- per-trial collision counts (``--per-trial`` rows) with
                     the analytic means C(N,2)/d and C(N,2)*2/(d+1) overlaid,
* ``convergence`` -- sharpness-estimate mean vs repetition budget per
                     dimension, with the 1 and 1/d reference levels.

Rendering is deterministic: fixed style, Agg backend, pinned PNG metadata,
no timestamps; the same CSV and spec produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import EmptyInputError, Row, read_csv

_STYLE = {
    "figure.figsize": (7.0, 4.6),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
_METADATA = {"Software": "plotkit"}

KINDS = ("scaling", "histogram", "convergence")


@dataclass(frozen=True)
class PlotSpec:
    input_csv: str
    kind: str
    out_path: str
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; choose from {KINDS}")


@dataclass(frozen=True)
class RenderResult:
    path: str
    annotated_slope: float | None = None
    overlay_means: dict = field(default_factory=dict)


def _fit_loglog(dims, budgets) -> float:
    slope, _ = np.polyfit(np.log(dims), np.log(budgets), 1)
    return float(slope)


def _render_scaling(rows: list[Row], spec: PlotSpec, ax) -> RenderResult:
    coll = sorted((r for r in rows if r.experiment == "sweep-collision"),
                  key=lambda r: r.d)
    if not coll:
        raise EmptyInputError("no sweep-collision rows in the input CSV")
    dims = [r.d for r in coll]
    budgets = [r.n_queries for r in coll]
    slope = _fit_loglog(dims, budgets)
    ax.loglog(dims, budgets, "o", color="tab:blue", label="collision test")
    grid = np.geomspace(min(dims), max(dims), 64)
    intercept = math.exp(
        np.mean(np.log(budgets)) - slope * np.mean(np.log(dims)))
    ax.loglog(grid, intercept * grid**slope, "-", color="tab:blue", alpha=0.6)

    mt = sorted((r for r in rows if r.experiment == "sweep-measure-twice"),
                key=lambda r: r.d)
    if mt:
        ax.loglog([r.d for r in mt], [r.n_queries for r in mt], "s",
                  color="tab:orange", label="measure twice")
    ax.annotate(f"fitted exponent = {slope:.6f}", xy=(0.05, 0.92),
                xycoords="axes fraction")
    ax.set_xlabel("dimension d")
    ax.set_ylabel("minimal query budget")
    ax.set_title(spec.title or "Query budget scaling")
    ax.legend(loc="lower right")
    return RenderResult(path=spec.out_path, annotated_slope=slope)


def _analytic_means(label: str, n: int, d: int) -> dict[str, float]:
    pairs = math.comb(n, 2)
    means = {}
    if ":projective" not in label:
        means["uniform"] = pairs / d
    if ":classical" not in label:
        means["haar"] = pairs * 2 / (d + 1)
    return means


def _render_histogram(rows: list[Row], spec: PlotSpec, ax) -> RenderResult:
    trial_rows = [r for r in rows if r.experiment.endswith("/trial")
                  and r.experiment.startswith("collision")]
    if not trial_rows:
        raise EmptyInputError(
            "no per-trial collision rows in the input CSV "
            "(generate with `sharpkit collision ... --per-trial`)")
    groups: dict[str, list[Row]] = {}
    for r in trial_rows:
        groups.setdefault(r.experiment, []).append(r)
    overlays: dict[str, dict[str, float]] = {}
    colors = ("tab:blue", "tab:orange", "tab:green", "tab:red")
    for color, (label, members) in zip(colors, sorted(groups.items())):
        counts = [r.mean for r in members]
        ax.hist(counts, bins=30, alpha=0.55, color=color, label=label)
        means = _analytic_means(label, members[0].n_queries, members[0].d)
        overlays[label] = means
        for name, value in means.items():
            ax.axvline(value, color=color, linestyle="--", linewidth=1.2)
            ax.annotate(f"{name}: {value:.6g}", xy=(value, 0.97),
                        xycoords=("data", "axes fraction"),
                        rotation=90, va="top", ha="right", fontsize=8)
    ax.set_xlabel("collision count C")
    ax.set_ylabel("trials")
    ax.set_title(spec.title or "Collision counts under both hypotheses")
    ax.legend(loc="upper right")
    return RenderResult(path=spec.out_path, overlay_means=overlays)


def _render_convergence(rows: list[Row], spec: PlotSpec, ax) -> RenderResult:
    series_rows = [r for r in rows if r.experiment.startswith("measure-twice")
                   and not r.experiment.endswith("/trial")]
    if not series_rows:
        raise EmptyInputError("no measure-twice rows in the input CSV")
    groups: dict[tuple[str, int], list[Row]] = {}
    for r in series_rows:
        groups.setdefault((r.experiment, r.d), []).append(r)
    for (label, d), members in sorted(groups.items()):
        members = sorted(members, key=lambda r: r.n_queries)
        reps = [r.n_queries for r in members]
        means = [r.mean for r in members]
        errs = [r.stderr for r in members]
        ax.errorbar(reps, means, yerr=errs, marker="o", capsize=3,
                    label=f"{label}, d={d}")
    dims = sorted({d for (_, d) in groups})
    ax.axhline(1.0, color="black", linestyle=":", linewidth=1)
    for d in dims:
        ax.axhline(1 / d, color="gray", linestyle=":", linewidth=1)
    ax.set_xscale("log", base=2)
    ax.set_ylim(-0.05, 1.1)
    ax.set_xlabel("repetitions")
    ax.set_ylabel("estimated sharpness")
    ax.set_title(spec.title or "Sharpness estimate convergence")
    ax.legend(loc="center right", fontsize=8)
    return RenderResult(path=spec.out_path, overlay_means={})


_RENDERERS = {
    "scaling": _render_scaling,
    "histogram": _render_histogram,
    "convergence": _render_convergence,
}


def render(spec: PlotSpec) -> RenderResult:
    """Render the requested figure; returns the annotation values used."""
    rows = read_csv(spec.input_csv)
    if not rows:
        raise EmptyInputError(f"{spec.input_csv}: no data rows")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            result = _RENDERERS[spec.kind](rows, spec, ax)
            fig.savefig(spec.out_path, metadata=_METADATA)
        finally:
            plt.close(fig)
    return result
