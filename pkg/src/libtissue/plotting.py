"""Figure rendering for ``plotdata``. Figures are written next to the CSV series."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _figure(width=6.0, height=3.2):
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=(width, height))


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def response_rate_figure(time_s, input_rate, response_rate, path) -> Path:
    fig, ax = _figure()
    ax.plot(time_s, input_rate, label="antigen in (per s)", color="0.5", lw=1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("antigen rate")
    ax2 = ax.twinx()
    ax2.plot(time_s, response_rate, label="responses (per s)", color="C3", lw=1.2)
    ax2.set_ylabel("response rate")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right", frameon=False)
    return _save(fig, path)


def vr_expression_figure(points: Sequence[tuple[float, int]], highlighted: Iterable[int], path) -> Path:
    highlighted = set(highlighted)
    fig, ax = _figure(height=4.0)
    plain = [(t, v) for t, v in points if v not in highlighted]
    hot = [(t, v) for t, v in points if v in highlighted]
    if plain:
        ax.scatter(*zip(*plain), s=1, color="0.7", marker="s", linewidths=0)
    if hot:
        ax.scatter(*zip(*hot), s=3, color="C3", marker="s", linewidths=0, label="responded")
        ax.legend(loc="upper right", frameon=False, markerscale=4)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("VR lock (syscall)")
    return _save(fig, path)


def signal_compare_figure(time_s, with_signal, without_signal, path, fixed_label: Optional[str] = None) -> Path:
    fig, ax = _figure()
    ax.plot(time_s, with_signal, label="with signal", color="C0")
    ax.plot(time_s, without_signal, label=fixed_label or "without signal", color="C1", ls="--")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean response rate (per s)")
    ax.legend(frameon=False)
    return _save(fig, path)
