"""Static PNG figures of a synthesis run (phase variables and control against t)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _panel(path, t, values, prefix, title):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for j in range(values.shape[1]):
        ax.plot(t, values[:, j], label=f"{prefix}{j + 1}")
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_figures(result, directory) -> list[Path]:
    """Write ``states.png`` and ``control.png`` into ``directory``; return the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    states = out / "states.png"
    control = out / "control.png"
    _panel(states, result.t, result.x, "x", "phase variables")
    _panel(control, result.t, result.u, "u", "control")
    return [states, control]
