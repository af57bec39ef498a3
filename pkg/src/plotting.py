"""
Plotting - SVG figures with matplotlib and PNG field rasters with Pillow.

SVG output is byte-reproducible: the hash salt is fixed and the date
metadata is dropped.
"""

import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .random_fields import Grid2D  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "postrisk-smc"
ADAPTIVE_COLOR = "tab:red"
FIXED_COLOR = "tab:blue"
TRUTH_COLOR = "black"
LN10 = math.log(10.0)


def configure_style() -> None:
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    matplotlib.rcParams["svg.fonttype"] = "path"
    matplotlib.rcParams["figure.dpi"] = 100


def save_svg(fig, path: str) -> str:
    configure_style()
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_field_profiles(centers: np.ndarray, fields: np.ndarray, path: str,
                        truth: Optional[np.ndarray] = None,
                        label: str = "log10 K") -> str:
    """Spaghetti plot of 1-D log-fields with the true field on top."""
    configure_style()
    fig, ax = plt.subplots(figsize=(6, 4))
    for f in np.atleast_2d(fields):
        ax.plot(centers, f / LN10, color="0.6", linewidth=0.6)
    if truth is not None:
        ax.plot(centers, np.asarray(truth) / LN10, color=TRUTH_COLOR, linewidth=1.8, label="truth")
        ax.legend(loc="best")
    ax.set_xlabel("x")
    ax.set_ylabel(label)
    return save_svg(fig, path)


def plot_field_heatmaps(grid: Grid2D, fields: Dict[str, np.ndarray], path: str,
                        label: str = "log10 T") -> str:
    """One panel per named 2-D log-field, sharing a colour scale."""
    configure_style()
    names = list(fields)
    values = [grid.as_grid(fields[n]) / LN10 for n in names]
    vmin = min(float(v.min()) for v in values)
    vmax = max(float(v.max()) for v in values)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False)
    extent = (0.0, grid.length_x, 0.0, grid.length_y)
    image = None
    for ax, name, v in zip(axes[0], names, values):
        image = ax.imshow(v, origin="lower", extent=extent, vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(image, ax=list(axes[0]), label=label, shrink=0.8)
    return save_svg(fig, path)


def plot_threshold_evolution(schedules: Sequence[Tuple[List[float], bool]], path: str,
                             target: Optional[float] = None, log_scale: bool = False) -> str:
    """Realized thresholds per level; adaptive runs in red, fixed schedules in blue."""
    configure_style()
    fig, ax = plt.subplots(figsize=(6, 4))
    for thresholds, adaptive in schedules:
        levels = np.arange(1, len(thresholds) + 1)
        ax.plot(levels, thresholds, color=ADAPTIVE_COLOR if adaptive else FIXED_COLOR,
                linewidth=0.8, alpha=0.8)
    if target is not None:
        ax.axhline(target, color=TRUTH_COLOR, linestyle="--", linewidth=1.0)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("level k")
    ax.set_ylabel("threshold T_k")
    return save_svg(fig, path)


def plot_estimate_ranges(estimates: Dict[str, Sequence[float]], path: str,
                         reference: Optional[float] = None) -> str:
    """Min-max bar per method or threshold with a cross at the mean."""
    configure_style()
    names = list(estimates)
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 4))
    for i, name in enumerate(names):
        values = np.asarray(estimates[name], dtype=float)
        ax.vlines(i, values.min(), values.max(), color=FIXED_COLOR, linewidth=3)
        ax.plot(i, values.mean(), marker="x", color=ADAPTIVE_COLOR, markersize=9)
    if reference is not None:
        ax.axhline(reference, color=TRUTH_COLOR, linestyle=":", linewidth=1.0)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20)
    ax.set_ylabel("probability estimate")
    return save_svg(fig, path)


def plot_paired_estimates(adaptive: Sequence[float], frozen: Sequence[float], path: str,
                          reference: Optional[float] = None) -> str:
    """Each adaptive-schedule estimate beside its re-run on the frozen thresholds."""
    configure_style()
    adaptive = np.asarray(adaptive, dtype=float)
    frozen = np.asarray(frozen, dtype=float)
    runs = np.arange(1, adaptive.size + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.vlines(runs, np.minimum(adaptive, frozen), np.maximum(adaptive, frozen), color="0.7", linewidth=0.8)
    ax.plot(runs, adaptive, "o", color=ADAPTIVE_COLOR, label=f"adaptive (mean {adaptive.mean():.3g})")
    ax.plot(runs, frozen, "s", color=FIXED_COLOR, label=f"frozen re-run (mean {frozen.mean():.3g})")
    if reference is not None:
        ax.axhline(reference, color=TRUTH_COLOR, linestyle=":", linewidth=1.0)
    # zeros from the re-runs would vanish on a log axis
    if np.all(adaptive > 0) and np.all(frozen > 0):
        ax.set_yscale("log")
    ax.set_xlabel("run")
    ax.set_ylabel("probability estimate")
    ax.legend(loc="best")
    return save_svg(fig, path)


def plot_concentration(grid: Grid2D, concentration: np.ndarray, path: str,
                       front_level: Optional[float] = None, title: str = "") -> str:
    configure_style()
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    c = grid.as_grid(concentration)
    extent = (0.0, grid.length_x, 0.0, grid.length_y)
    image = ax.imshow(c, origin="lower", extent=extent, cmap="magma", vmin=0.0)
    if front_level is not None and c.max() >= front_level:
        ax.contour(grid.x_centers, grid.y_centers, c, levels=[front_level], colors="white",
                   linewidths=0.8)
    fig.colorbar(image, ax=ax, label="concentration [g/l]")
    if title:
        ax.set_title(title)
    return save_svg(fig, path)


def export_field_png(grid: Grid2D, field: np.ndarray, path: str, scale: int = 8,
                     cmap: str = "viridis") -> str:
    """Raster image of a 2-D field, ``scale`` pixels per cell, north up."""
    values = np.flipud(grid.as_grid(field))
    low, high = float(values.min()), float(values.max())
    normalized = (values - low) / (high - low) if high > low else np.zeros_like(values)
    rgba = matplotlib.colormaps[cmap](normalized)
    pixels = (rgba[:, :, :3] * 255).round().astype(np.uint8)
    image = Image.fromarray(pixels)
    image = image.resize((grid.nx * scale, grid.ny * scale), Image.Resampling.NEAREST)
    image.save(path, format="PNG")
    return path


def verify_png(path: str) -> Tuple[int, int]:
    """Open a PNG, check its integrity and return its size."""
    with Image.open(path) as img:
        img.verify()
    with Image.open(path) as img:
        return img.size


def render_outputs(out_dir: str, report: dict, fields: Optional[np.ndarray],
                   truth: Optional[dict], grid=None) -> List[str]:
    """Write every figure a run directory supports; returns the file paths."""
    written: List[str] = []
    target = float(report.get("target", 0.0)) if "target" in report else None

    schedules = []
    for run in report["per_run"]:
        thresholds = run.get("schedules", {}).get("thresholds")
        if thresholds:
            adaptive = report.get("config", {}).get("rare", {}).get("schedule") == "adaptive"
            schedules.append((thresholds, adaptive))
    if schedules:
        written.append(plot_threshold_evolution(schedules, os.path.join(out_dir, "thresholds.svg"), target))

    if report.get("method") == "bias-probe":
        paired = {key: [run["estimates_by_threshold"][key] for run in report["per_run"]]
                  for key in ("adaptive", "frozen")}
        written.append(plot_paired_estimates(paired["adaptive"], paired["frozen"],
                                             os.path.join(out_dir, "bias.svg")))

    ranges = {key: [run["estimates_by_threshold"][key] for run in report["per_run"]]
              for key in report["per_run"][0]["estimates_by_threshold"]}
    if ranges:
        written.append(plot_estimate_ranges(ranges, os.path.join(out_dir, "estimates.svg")))

    truth_field = np.asarray(truth["log_field"]) if truth else None
    if fields is not None and grid is not None:
        if isinstance(grid, Grid2D):
            panels = {"mean": fields.mean(axis=0), "realization 0": fields[0]}
            if truth_field is not None:
                panels = {"truth": truth_field, **panels}
            written.append(plot_field_heatmaps(grid, panels, os.path.join(out_dir, "fields.svg")))
            written.append(export_field_png(grid, fields.mean(axis=0), os.path.join(out_dir, "mean_field.png")))
        else:
            written.append(plot_field_profiles(grid.cell_centers, fields, os.path.join(out_dir, "fields.svg"),
                                               truth_field))
    logger.info("wrote %d figures to %s", len(written), out_dir)
    return written
