"""
Static figures for study results.

Figures are drawn with matplotlib's object API (no pyplot state, no GUI
backend) and saved in the format implied by the file extension; ``.svg`` gives
vector output. Every figure carries the params hash of the result it shows.
"""

import logging

import numpy as np
from matplotlib.figure import Figure

from .analysis import SweepResult

logger = logging.getLogger(__name__)

HEATMAP_PAYLOAD = {
    "keyrate": ("key_rate_clamped", "Secret key rate [bits/symbol]"),
    "tolerance": ("tolerable_excess_noise", "Tolerable excess noise [SNU]"),
    "optimize": ("optimal_modulation_variance", "Optimal V_mod [SNU]"),
}


def _as_floats(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _stamp(fig: Figure, result: SweepResult) -> None:
    meta = result.metadata
    fig.text(
        0.99,
        0.01,
        f"params {meta['params_hash']} | cvqkd {meta['tool_version']}",
        ha="right",
        va="bottom",
        fontsize=7,
        color="0.4",
    )


def _edges(centers) -> np.ndarray:
    """Cell edges around axis values; a lone value gets a unit-wide cell."""
    centers = np.asarray(centers, dtype=float)
    if len(centers) == 1:
        return np.array([centers[0] - 0.5, centers[0] + 0.5])
    middle = 0.5 * (centers[1:] + centers[:-1])
    first = centers[0] - (middle[0] - centers[0])
    last = centers[-1] + (centers[-1] - middle[-1])
    return np.concatenate([[first], middle, [last]])


def plot_heatmap(result: SweepResult, path: str) -> None:
    """Pseudo-color map over ONU count (x) and distance (y)."""
    key, label = HEATMAP_PAYLOAD[result.kind]
    distances = result.axis_values("distance_km")
    onus = result.axis_values("n_onus")
    matrix = result.as_matrix(key, "distance_km", "n_onus")

    fig = Figure(figsize=(7.0, 5.0))
    ax = fig.add_subplot()
    mesh = ax.pcolormesh(_edges(onus), _edges(distances), matrix, cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("Number of ONUs")
    ax.set_ylabel("Distance [km]")
    ax.set_title(label.split(" [")[0])
    _stamp(fig, result)
    fig.savefig(path)
    logger.info("Wrote heatmap to %s", path)


def plot_compare(result: SweepResult, path: str) -> None:
    """Grouped bars of both rates per ONU count, ratio curve on a second axis."""
    losses = result.axis_values("fiber_loss_db")
    fig = Figure(figsize=(4.0 * len(losses), 4.5))
    axes = fig.subplots(1, len(losses), squeeze=False)[0]

    for ax, loss in zip(axes, losses):
        part = result.slice("fiber_loss_db", loss)
        onus = part.column("n_onus")
        positions = np.arange(len(onus))
        down = _as_floats(part.column("key_rate_downstream"))
        ptp = _as_floats(part.column("key_rate_point_to_point"))
        ratio = _as_floats(part.column("ratio"))

        ax.bar(positions - 0.2, ptp, width=0.4, label="Point-to-point")
        ax.bar(positions + 0.2, down, width=0.4, label="Downstream")
        ax.set_xticks(positions)
        ax.set_xticklabels([str(n) for n in onus])
        ax.set_xlabel("Number of ONUs")
        ax.set_ylabel("Secret key rate [bits/symbol]")
        ax.set_title(f"Fiber loss {loss:g} dB")

        twin = ax.twinx()
        twin.plot(positions, ratio, color="tab:purple", marker="o", label="Ratio")
        twin.set_ylabel("Ratio [%]")
        twin.set_ylim(0, 105)

    axes[0].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _stamp(fig, result)
    fig.savefig(path)
    logger.info("Wrote comparison plot to %s", path)


def plot_optimum(result: SweepResult, path: str) -> None:
    """Optimal modulation variance against ONU count, one line per distance."""
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot()
    for distance in result.axis_values("distance_km"):
        part = result.slice("distance_km", distance)
        values = _as_floats(part.column("optimal_modulation_variance"))
        ax.plot(part.column("n_onus"), values, marker="o", label=f"{distance:g} km")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("Number of ONUs")
    ax.set_ylabel("Optimal V_mod [SNU]")
    ax.legend(fontsize=8)
    _stamp(fig, result)
    fig.savefig(path)
    logger.info("Wrote optimum plot to %s", path)


def write_plot(result: SweepResult, path: str) -> None:
    """Pick the figure type for ``result.kind`` and save it to ``path``."""
    if result.kind == "compare":
        plot_compare(result, path)
    elif result.kind == "optimize":
        plot_optimum(result, path)
    elif result.kind in HEATMAP_PAYLOAD:
        plot_heatmap(result, path)
    else:
        raise ValueError(f"No figure for {result.kind!r} results")
