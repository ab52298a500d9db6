"""Static figures: mass (solid) and nutrient (dashed) against time."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import read_columns  # noqa: E402

WIDTH, HEIGHT = 800, 500  # SVG user units (points)
MARGINS = dict(left=60, right=20, top=30, bottom=50)

STYLE = {
    "svg.hashsalt": "esdlab",
    "svg.fonttype": "none",
    "font.size": 11,
    "axes.labelsize": 12,
    "lines.linewidth": 1.6,
    "legend.fontsize": 10,
    "legend.frameon": False,
}

LINESTYLES = ("-", "--", ":", "-.")
LABELS = {"rho": r"$\rho(t)$", "S": r"$S(t)$"}


def _figure():
    fig = plt.figure(figsize=(WIDTH / 72, HEIGHT / 72), dpi=72)
    fig.subplots_adjust(
        left=MARGINS["left"] / WIDTH,
        right=1 - MARGINS["right"] / WIDTH,
        top=1 - MARGINS["top"] / HEIGHT,
        bottom=MARGINS["bottom"] / HEIGHT,
    )
    return fig, fig.add_subplot(1, 1, 1)


def plot_series(columns: dict, out, names=("rho", "S"), title: str = "") -> Path:
    """Draw ``names`` against ``t``; the first is solid, the second dashed."""
    missing = [c for c in ("t", *names) if c not in columns]
    if missing:
        raise KeyError(f"columns not found: {', '.join(missing)}")
    out = Path(out)
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for name, ls in zip(names, LINESTYLES):
            ax.plot(columns["t"], columns[name], ls, color="black", label=LABELS.get(name, name))
        ax.set_xlabel("time $t$")
        ax.set_ylabel(", ".join(LABELS.get(n, n) for n in names))
        if columns["t"][-1] > columns["t"][0]:
            ax.set_xlim(columns["t"][0], columns["t"][-1])
        ax.legend(loc="upper right")
        if title:
            ax.set_title(title)
        out.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{out.name}.", suffix=out.suffix or ".svg", dir=out.parent)
        os.close(fd)
        try:
            fig.savefig(tmp, format=(out.suffix.lstrip(".") or "svg"), metadata={"Date": None})
            os.replace(tmp, out)
        finally:
            plt.close(fig)
            if os.path.exists(tmp):
                os.unlink(tmp)
    return out


def plot_csv(csv_path, out, names=("rho", "S")) -> Path:
    return plot_series(read_columns(csv_path), out, names)
