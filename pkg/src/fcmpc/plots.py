"""Static SVG plots of closed-loop traces.

All figures are written through the Agg/SVG backend with a fixed hash
salt and no embedded timestamp, so the same trace always produces the
same bytes. That property is load-bearing for the reproducibility
checks, not just a nicety.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import SimTrace

__all__ = ["plot_voltage", "plot_pressure", "plot_inputs"]

_SAVE = dict(format="svg", metadata={"Date": None})


def _fig():
    plt.rcParams["svg.hashsalt"] = "fcmpc"
    fig, ax = plt.subplots(figsize=(7.0, 3.2), constrained_layout=True)
    ax.grid(True, alpha=0.3)
    ax.set_xlabel("time [s]")
    return fig, ax


def plot_voltage(trace: SimTrace, path) -> None:
    fig, ax = _fig()
    ax.plot(trace.t, trace.V_meas, color="0.75", lw=0.8, label="measured")
    ax.plot(trace.t, trace.V_true, color="C0", lw=1.4, label="stack voltage")
    ax.axhline(trace.reference, color="C3", ls="--", lw=1.0, label="reference")
    ax.set_ylabel("voltage [V]")
    ax.set_title(f"{trace.controller} / {trace.name}")
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_pressure(trace: SimTrace, path, p_limit: float = 2.5) -> None:
    fig, ax = _fig()
    ax.plot(trace.t, trace.P_H2_meas, color="0.75", lw=0.8, label="measured")
    ax.plot(trace.t, trace.P_H2_true, color="C2", lw=1.4, label="anode H2 pressure")
    ax.axhline(p_limit, color="C3", ls="--", lw=1.0, label="limit")
    ax.set_ylabel("pressure [atm]")
    ax.set_title(f"{trace.controller} / {trace.name}")
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_inputs(trace: SimTrace, path) -> None:
    fig, ax = _fig()
    ax.plot(trace.t, trace.Q_H2, color="C0", lw=1.4, label="H2 flow")
    ax.plot(trace.t, trace.Q_air, color="C1", lw=1.4, label="air flow")
    ax.set_ylabel("flow [lpm]")
    ax2 = ax.twinx()
    ax2.plot(trace.t, trace.I, color="0.5", lw=1.0, ls=":", label="load")
    ax2.set_ylabel("current [A]")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="center right",
              fontsize=8)
    ax.set_title(f"{trace.controller} / {trace.name}")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
