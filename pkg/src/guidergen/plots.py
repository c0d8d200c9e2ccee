"""Figure rendering for CLI reports.

Every command that writes delimited output also drops a PNG next to it:
training curves for the loop logs, a per-position bar chart for reward
traces, and a per-order bar chart for BLEU reports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def figure_path(csv_path) -> str:
    path = str(csv_path)
    return (path[:-4] if path.endswith(".csv") else path) + ".png"


def save_train_log_figure(log, path) -> None:
    """Curves of whichever log columns are populated, over the step index."""
    series = {}
    for col in ("mle_loss", "mean_rg", "mean_q", "d_loss", "bleu2",
                "self_bleu2"):
        pts = [(r["step"], r[col]) for r in log.rows if r.get(col) is not None]
        if pts:
            series[col] = pts
    if not series:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, pts in series.items():
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker=".", markersize=3, linewidth=1, label=name)
    ax.set_xlabel("step")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_reward_trace_figure(positions, tokens, rewards, path) -> None:
    """Per-position feature-matching rewards for one sentence."""
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(positions)), 3.2))
    ax.bar(positions, rewards, color="#4878cf")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(positions)
    ax.set_xticklabels(tokens, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("feature-matching reward")
    ax.set_ylim(-1.05, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bleu_figure(report, path, title="BLEU") -> None:
    orders = sorted(report.scores)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([str(n) for n in orders], [report.scores[n] for n in orders],
           color="#6acc65")
    ax.set_xlabel("n-gram order")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
