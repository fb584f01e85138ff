"""Figures rendered from the experiment CSVs.

The Agg backend is forced so rendering works headless; figures are written
next to the CSV they were drawn from.
"""

from __future__ import annotations

from math import sqrt
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from socialfl.harness.report import read_csv  # noqa: E402

GOLDEN = (sqrt(5.0) - 1.0) / 2.0
WIDTH_IN = 5.0

STYLE = {
    "figure.figsize": (WIDTH_IN, WIDTH_IN * GOLDEN),
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_coalition(csv_path: str | Path, out: str | Path | None = None) -> Path:
    """Mean individual payoff per iteration against the non-cooperative line."""
    rows = read_csv(csv_path, "coalition")
    out = Path(out or Path(csv_path).with_suffix(".png"))
    # Every avatar starts alone, so iteration 0 sits on the baseline.
    base = [float(r["noncoop_avg_payoff"]) for r in rows]
    it = [0] + [int(r["iteration"]) for r in rows]
    social = base[:1] + [float(r["socialfl_avg_payoff"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(it, social, "o-", label="SocialFL")
        ax.plot(it, base[:1] + base, "s--", label="non-cooperative")
        ax.set_xlabel("iteration")
        ax.set_ylabel("average individual payoff")
        ax.set_xticks(it)
        ax.legend(frameon=False)
        return _save(fig, out)


def plot_provenance(csv_path: str | Path, out: str | Path | None = None) -> Path:
    """Attack success rate against collusion ratio, one line per attack."""
    rows = read_csv(csv_path, "provenance")
    out = Path(out or Path(csv_path).with_suffix(".png"))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        styles = [("o", "-", 7), ("s", "--", 4), ("^", ":", 4)]
        for attack, (marker, line, size) in zip(sorted({r["attack"] for r in rows}), styles):
            mine = sorted((float(r["ratio"]), float(r["rate"])) for r in rows if r["attack"] == attack)
            ax.plot([x for x, _ in mine], [y for _, y in mine], marker=marker, ls=line, ms=size, label=attack)
        ax.set_xlabel("collusion ratio")
        ax.set_ylabel("attack success rate")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(frameon=False)
        return _save(fig, out)


def plot_reputation(history, byzantine_ids, out: str | Path) -> Path:
    """Mean reputation of honest and faulty nodes per height."""
    heights = range(len(history))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        honest = [[v for k, v in h.items() if k not in byzantine_ids] for h in history]
        ax.plot(heights, [sum(v) / len(v) for v in honest], label="honest")
        faulty = [[h[k] for k in byzantine_ids] for h in history]
        if byzantine_ids:
            ax.plot(heights, [sum(v) / len(v) for v in faulty], label="faulty")
        ax.set_xlabel("height")
        ax.set_ylabel("mean reputation")
        ax.legend(frameon=False)
        return _save(fig, Path(out))
