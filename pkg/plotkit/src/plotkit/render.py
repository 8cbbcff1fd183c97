"""Figure rendering for the four artifact kinds.

Rendering is read-only over its inputs and deterministic (no timestamps are
embedded), so repeated renders of the same CSV are byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import (PlotKitError, Table, load_basin, load_components,
                 load_learner, load_trace)

KINDS = ("basin", "curves", "trajectories", "components")
DPI = 130


@dataclass
class PlotJob:
    kind: str
    input_path: str
    output_path: str
    log_y: bool = False
    title: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotKitError(f"unknown plot kind {self.kind!r}")


@dataclass
class RenderResult:
    output_path: str
    kind: str
    stable_count: int = 0
    players: int = 0
    rows: int = 0


def _save(fig, job) -> None:
    if job.title:
        fig.suptitle(job.title)
    path = Path(job.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def _render_basin(job: PlotJob) -> RenderResult:
    table = load_basin(job.input_path)
    if table.n_players != 2:
        raise PlotKitError("basin maps are two-dimensional")
    sx, sy = table["start_x1"], table["start_x2"]
    labels = table["basin_label"].astype(int)
    stable = table["stable"].astype(int)
    xs = np.unique(sx)
    ys = np.unique(sy)
    grid = np.full((len(ys), len(xs)), -1.0)
    ix = np.searchsorted(xs, sx)
    iy = np.searchsorted(ys, sy)
    grid[iy, ix] = labels
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    ax.imshow(grid, origin="lower", cmap="Pastel1",
              extent=[xs.min(), xs.max(), ys.min(), ys.max()], aspect="auto",
              interpolation="nearest")
    marks = []
    for lab in np.unique(labels[(labels >= 0) & (stable == 1)]):
        mask = labels == lab
        ex = table["end_x1"][mask]
        ey = table["end_x2"][mask]
        marks.append((np.median(ex), np.median(ey)))
    for mx, my in marks:
        ax.plot(mx, my, "o", color="black", markersize=9)
        ax.plot(mx, my, "o", color="white", markersize=4)
    ax.set_xlabel("player 1 choice")
    ax.set_ylabel("player 2 choice")
    _save(fig, job)
    return RenderResult(output_path=str(job.output_path), kind="basin",
                        stable_count=len(marks), players=2, rows=len(sx))


def _per_player(table: Table, column: str):
    players = sorted(set(table["player"].astype(int)))
    for p in players:
        mask = table["player"].astype(int) == p
        yield p, table["k"][mask], table[column][mask]


def _render_curves(job: PlotJob) -> RenderResult:
    table = load_learner(job.input_path)
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))
    panels = [("theta_err", "estimation error"), ("loss", "loss"),
              ("xi_norm_sq", "excitation |xi|^2")]
    for ax, (col, label) in zip(axes, panels):
        for p, ks, ys in _per_player(table, col):
            ax.plot(ks, ys, label=f"player {p}", linewidth=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        if job.log_y and col != "xi_norm_sq":
            positive = table[col] > 0
            if positive.any():
                ax.set_yscale("log")
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, job)
    return RenderResult(output_path=str(job.output_path), kind="curves",
                        players=table.n_players, rows=len(table["k"]))


def _render_trajectories(job: PlotJob) -> RenderResult:
    table = load_trace(job.input_path)
    n = table.n_players
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    for i in range(n):
        ax1.plot(table["k"], table[f"x_{i+1}"], label=f"x_{i+1}",
                 linewidth=1.0)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("response")
    ax1.legend(fontsize=8)
    ax2.plot(table["k"], table["xd_err"], label="|x - x_d|", linewidth=1.0)
    ax2.plot(table["k"], table["v_err"], label="|v - v_d|", linewidth=1.0)
    if job.log_y:
        positive = (table["xd_err"] > 0) | (table["v_err"] > 0)
        if positive.any():
            ax2.set_yscale("log")
    ax2.set_xlabel("iteration")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, job)
    return RenderResult(output_path=str(job.output_path), kind="trajectories",
                        players=n, rows=len(table["k"]))


def _render_components(job: PlotJob) -> RenderResult:
    table = load_components(job.input_path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    for p, ks, ys in _per_player(table, "nominal_est"):
        ax1.plot(ks, ys, label=f"nominal, player {p}", linewidth=1.0)
    for p, ks, ys in _per_player(table, "incentive_est"):
        ax1.plot(ks, ys, "--", label=f"incentive, player {p}", linewidth=1.0)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("estimated cost components")
    ax1.legend(fontsize=7)
    for p, ks, ys in _per_player(table, "x_actual"):
        ax2.plot(ks, ys, label=f"x, player {p}", linewidth=1.0)
    for p, ks, ys in _per_player(table, "xhat"):
        ax2.plot(ks, ys, "--", label=f"estimate, player {p}", linewidth=1.0)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("response vs estimate")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, job)
    return RenderResult(output_path=str(job.output_path), kind="components",
                        players=table.n_players, rows=len(table["k"]))


def render(job: PlotJob) -> RenderResult:
    """Render one job; returns counts the caller can asserts against."""
    if job.kind == "basin":
        return _render_basin(job)
    if job.kind == "curves":
        return _render_curves(job)
    if job.kind == "trajectories":
        return _render_trajectories(job)
    return _render_components(job)
