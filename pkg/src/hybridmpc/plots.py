"""SVG figures for mission and sweep outputs.

Rendered with matplotlib's SVG backend, no display needed.  Metadata dates
and element ids are pinned so repeated runs write identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("svg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "hybridmpc"

_LABELS = {
    "p_drv": "P_drv", "p_b": "P_b", "p_gt": "P_gt", "p_em": "P_em",
    "p_el": "P_el", "p_c": "P_c", "p_gen": "P_gen",
}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def power_split(path, result) -> None:
    """Drive, battery and component powers over the mission."""
    fig, ax = plt.subplots(figsize=(7, 4))
    t = result.t / 60.0
    ax.step(t, result.p_drv, where="post", label=_LABELS["p_drv"], color="k")
    ax.step(t, result.p_b, where="post", label=_LABELS["p_b"], lw=2)
    for name, values in result.components.items():
        ax.step(t, values, where="post", label=_LABELS.get(name, name), ls="--")
    ax.set_xlabel("time (min)")
    ax.set_ylabel("power per system (MW)")
    ax.set_title(f"{result.strategy.value}, {result.topology.value}")
    ax.legend(loc="best", fontsize="small")
    ax.grid(alpha=0.3)
    _save(fig, path)


def soc_and_mass(path, result) -> None:
    """Battery SOC and aircraft mass in two stacked panels."""
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    t = np.append(result.t, result.t[-1] + result.delta) / 60.0
    a1.plot(t, result.E)
    a1.set_ylabel("SOC per system (MJ)")
    a1.grid(alpha=0.3)
    a2.plot(t, result.m, color="tab:red")
    a2.set_ylabel("aircraft mass (kg)")
    a2.set_xlabel("time (min)")
    a2.grid(alpha=0.3)
    _save(fig, path)


def battery_overlay(path, results) -> None:
    """Battery power of several strategies on one axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for r in results:
        ax.step(r.t / 60.0, r.p_b, where="post", label=f"{r.strategy.value} ({r.fuel:.1f} kg)")
    ax.set_xlabel("time (min)")
    ax.set_ylabel("battery power per system (MW)")
    ax.legend(loc="best", fontsize="small")
    ax.grid(alpha=0.3)
    _save(fig, path)


def sweep_plot(path, axis, values, columns: dict, *, loglog: bool = False) -> None:
    """One panel per named series against the swept values."""
    n = len(columns)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.4 * n), sharex=True, squeeze=False)
    for ax, (name, ys) in zip(axes[:, 0], columns.items()):
        if isinstance(ys, dict):
            for label, y in ys.items():
                ax.plot(values, y, marker="o", label=label)
            ax.legend(fontsize="small")
        else:
            ax.plot(values, ys, marker="o")
        ax.set_ylabel(name)
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.grid(alpha=0.3, which="both")
    axes[-1, 0].set_xlabel(axis)
    _save(fig, path)
