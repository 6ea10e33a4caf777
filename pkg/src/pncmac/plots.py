"""Figure rendering for campaign datasets."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

PROTOCOL_STYLE = {
    "pnc": {"marker": "o", "color": "tab:red", "label": "PNC-MAC"},
    "cnc": {"marker": "s", "color": "tab:blue", "label": "CNC-MAC"},
    "dot11": {"marker": "^", "color": "tab:green", "label": "802.11"},
}


def render_figure(rows: list[dict], xlabel: str, ylabel: str, title: str,
                  path: str, logx: bool = False):
    """One curve per protocol with mean +/- std error bars, saved to ``path``."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    protocols = sorted({r["protocol"] for r in rows},
                       key=lambda p: list(PROTOCOL_STYLE).index(p))
    for proto in protocols:
        pts = sorted((float(r["x"]), float(r["mean"]), float(r["std"]))
                     for r in rows if r["protocol"] == proto and r["mean"] != "")
        if not pts:
            continue
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        es = [p[2] for p in pts]
        style = PROTOCOL_STYLE[proto]
        ax.errorbar(xs, ys, yerr=es, capsize=3, **style)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
