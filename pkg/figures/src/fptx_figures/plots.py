"""The four figure renderers.

Each function is a pure map from a CSV file to an image: fixed style, no
timestamps, so rerunning on the same input produces an identical file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .csvdata import SchemaError, group_precisions, load_table, precision_label

_STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass
class PlotResult:
    path: str
    figure_id: int
    curves: int = 0
    slopes: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _fit_slope(x, y):
    """Least-squares slope of log10(y) against log10(x); None when fewer
    than two positive points are available."""
    xs, ys = [], []
    for a, b in zip(x, y):
        if a > 0 and b > 0 and math.isfinite(b):
            xs.append(math.log10(a))
            ys.append(math.log10(b))
    if len(xs) < 2:
        return None
    return float(np.polyfit(xs, ys, 1)[0])


def _slope_triangle(ax, x, y, slope, color="0.4"):
    """Annotate a log-log axis with a right triangle of the given slope."""
    x0, x1 = x * 1.0, x * 2.0
    y0 = y
    y1 = y0 * (x1 / x0) ** slope
    ax.plot([x0, x1, x1, x0], [y0, y0, y1, y0], color=color, lw=1.0)
    ax.annotate(f"slope {slope:.2f}", (x1 * 1.05, math.sqrt(y0 * y1)),
                color=color, fontsize=8, va="center")


def _empty(ax, message):
    ax.text(0.5, 0.5, message, ha="center", va="center",
            transform=ax.transAxes, color="0.4")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_depth(csv_path, out_path) -> PlotResult:
    """Depth-sweep figure: per-layer mean error (log scale), per-layer
    median with a 5th-95th percentile band, and the final-layer error
    histogram with the mean marked."""
    table = load_table(csv_path)
    result = PlotResult(str(out_path), 1)
    with plt.rc_context(_STYLE):
        fig = plt.figure(figsize=(9.6, 6.4))
        grid = fig.add_gridspec(2, 2)
        ax_mean = fig.add_subplot(grid[0, :])
        ax_med = fig.add_subplot(grid[1, 0])
        ax_hist = fig.add_subplot(grid[1, 1])

        if len(table) == 0:
            result.warnings.append("empty table")
            for ax in (ax_mean, ax_med, ax_hist):
                _empty(ax, "no data")
            fig.suptitle("relative rounding error by layer (no data)")
            fig.savefig(out_path)
            plt.close(fig)
            return result

        precisions = group_precisions(table)
        final_layer = str(max(int(r["layer"]) for r in table.rows if r["layer"]))
        for idx, (mode, value) in enumerate(precisions):
            color = _COLORS[idx % len(_COLORS)]
            label = precision_label({"precision_mode": mode, "precision_value": value})
            sel = dict(precision_mode=mode, precision_value=value, metric="cw")
            layers, means = table.series("layer", x_as=int, stat="mean", **sel)
            if layers:
                ax_mean.semilogy(layers, means, color=color, label=label)
                result.curves += 1
            layers, med = table.series("layer", x_as=int, stat="median", **sel)
            _, p5 = table.series("layer", x_as=int, stat="p5", **sel)
            _, p95 = table.series("layer", x_as=int, stat="p95", **sel)
            if layers:
                ax_med.semilogy(layers, med, color=color, label=label)
                if len(p5) == len(layers) and len(p95) == len(layers):
                    ax_med.fill_between(layers, p5, p95, color=color, alpha=0.2)
            centres, counts = table.series("grid_value", stat="hist_count",
                                           layer=final_layer, **sel)
            if centres:
                width = (centres[1] - centres[0]) if len(centres) > 1 else 0.2
                ax_hist.bar(centres, counts, width=width, color=color, alpha=0.45)
                _, mean_final = table.series("layer", x_as=int, stat="mean",
                                             layer=final_layer, **sel)
                if mean_final and mean_final[0] > 0:
                    ax_hist.axvline(math.log10(mean_final[0]), color="black", lw=1.2)

        ax_mean.set_xlabel("layer")
        ax_mean.set_ylabel("mean relative error")
        ax_mean.legend(loc="lower right", fontsize=8)
        ax_med.set_xlabel("layer")
        ax_med.set_ylabel("median (5th-95th pct band)")
        ax_hist.set_xlabel("log10 final-layer error")
        ax_hist.set_ylabel("count")
        fig.suptitle("relative rounding error by layer")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return result


def plot_scaling(csv_path, out_path, figure_id: int = 3) -> PlotResult:
    """Log-log error against the swept grid value, with a fitted-slope
    triangle; one panel per error metric present in the file."""
    if figure_id not in (2, 3):
        raise ValueError("scaling plots are figures 2 and 3")
    table = load_table(csv_path)
    result = PlotResult(str(out_path), figure_id)
    metrics = [m for m in ("cw", "nw") if table.filtered(metric=m)]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, max(len(metrics), 1),
                                 figsize=(4.8 * max(len(metrics), 1), 4.2),
                                 squeeze=False)
        if not metrics:
            result.warnings.append("empty table")
            _empty(axes[0][0], "no data")
            fig.savefig(out_path)
            plt.close(fig)
            return result

        grid_name = next((r["grid_name"] for r in table.rows if r["grid_name"]
                          and r["stat"] == "mean"), "scale")
        for ax, metric in zip(axes[0], metrics):
            idx = 0
            for mode, value in group_precisions(table):
                base = dict(precision_mode=mode, precision_value=value, metric=metric)
                layers = sorted({r["layer"] for r in table.filtered(**base)}, key=int) \
                    if figure_id == 2 else [None]
                for layer in layers:
                    sel = dict(base)
                    if layer is not None:
                        sel["layer"] = layer
                    xs, ys = table.series("grid_value", stat="mean", **sel)
                    if not xs:
                        continue
                    label = precision_label({"precision_mode": mode,
                                             "precision_value": value})
                    if layer is not None:
                        label += f", L={layer}"
                    color = _COLORS[idx % len(_COLORS)]
                    idx += 1
                    result.curves += 1
                    if len(xs) == 1:
                        ax.loglog(xs, ys, "o", color=color, label=label)
                        continue
                    ax.loglog(xs, ys, "-o", color=color, label=label, markersize=2.5)
                    _, std = table.series("grid_value", stat="std", **sel)
                    if len(std) == len(ys):
                        lo = [max(y - s, 1e-300) for y, s in zip(ys, std)]
                        hi = [y + s for y, s in zip(ys, std)]
                        ax.fill_between(xs, lo, hi, color=color, alpha=0.15)
                    slope = _fit_slope(xs, ys)
                    if slope is not None:
                        result.slopes[(metric, label)] = slope
            if result.slopes:
                # annotate one triangle per panel with the panel's last slope
                panel_slopes = [v for (m, _), v in result.slopes.items() if m == metric]
                if panel_slopes:
                    xs_all = [float(r["grid_value"]) for r in table.filtered(
                        metric=metric, stat="mean") if r["value"]]
                    ys_all = [float(r["value"]) for r in table.filtered(
                        metric=metric, stat="mean") if r["value"]]
                    if xs_all and min(ys_all) > 0:
                        _slope_triangle(ax, np.median(xs_all), min(ys_all),
                                        panel_slopes[-1])
            ax.set_xlabel(grid_name)
            ax.set_ylabel(f"mean relative error ({metric})")
            ax.legend(fontsize=7)
        fig.suptitle("rounding error growth under scaling")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return result


def plot_placement(csv_path, out_path) -> PlotResult:
    """Pre- versus post-attention normalization: per-layer mean error with
    one-standard-deviation bands, paired by precision."""
    table = load_table(csv_path)
    placements = table.values("placement")
    if len(table) and not any(p in ("pre", "post") for p in placements):
        raise SchemaError("placement column carries no pre/post values")
    result = PlotResult(str(out_path), 4)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(7.2, 4.6))
        if len(table) == 0:
            result.warnings.append("empty table")
            _empty(ax, "no data")
            fig.savefig(out_path)
            plt.close(fig)
            return result
        idx = 0
        for mode, value in group_precisions(table):
            for placement, dash in (("pre", "-"), ("post", "--")):
                sel = dict(precision_mode=mode, precision_value=value,
                           metric="cw", placement=placement)
                layers, means = table.series("layer", x_as=int, stat="mean", **sel)
                if not layers:
                    continue
                color = _COLORS[idx // 2 % len(_COLORS)]
                label = (precision_label({"precision_mode": mode,
                                          "precision_value": value})
                         + f", {placement}")
                ax.semilogy(layers, means, dash, color=color, label=label)
                _, std = table.series("layer", x_as=int, stat="std", **sel)
                if len(std) == len(means):
                    lo = [max(m - s, 1e-300) for m, s in zip(means, std)]
                    hi = [m + s for m, s in zip(means, std)]
                    ax.fill_between(layers, lo, hi, color=color, alpha=0.15)
                idx += 1
                result.curves += 1
        ax.set_xlabel("layer")
        ax.set_ylabel("mean relative error")
        ax.legend(fontsize=7)
        fig.suptitle("normalization before vs after the attention")
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
    return result


def render(figure_id: int, csv_path, out_path) -> PlotResult:
    if figure_id == 1:
        return plot_depth(csv_path, out_path)
    if figure_id in (2, 3):
        return plot_scaling(csv_path, out_path, figure_id)
    if figure_id == 4:
        return plot_placement(csv_path, out_path)
    raise ValueError("figure id must be 1..4")
