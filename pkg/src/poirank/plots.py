"""Figure rendering for the report paths.

Each report-producing command writes a PNG next to its delimited output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import RankReport  # noqa: E402


def render_training_curves(records: list[dict], path: str) -> None:
    epochs = [r["epoch"] for r in records]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(epochs, [r["train_loss"] for r in records], "o-", color="tab:blue",
                 label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:blue")
    ax_mrr = ax_loss.twinx()
    ax_mrr.plot(epochs, [r["val_mrr"] for r in records], "s--", color="tab:orange",
                label="val MRR")
    ax_mrr.set_ylabel("validation MRR", color="tab:orange")
    ax_mrr.set_ylim(0, 1)
    fig.suptitle("Training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figure(report: RankReport, path: str) -> None:
    names = ["HR@5", "HR@10", "NDCG@5", "NDCG@10", "MRR"]
    values = [report.hr5, report.hr10, report.ndcg5, report.ndcg10, report.mrr]
    strata = sorted(report.strata)
    ncols = 2 if strata else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 4))
    ax0 = axes[0] if ncols == 2 else axes
    ax0.bar(names, values, color="tab:blue")
    ax0.set_ylim(0, 1)
    ax0.set_title(f"Ranking metrics (pool={report.pool_size}, n={report.num_instances})")
    ax0.tick_params(axis="x", rotation=30)
    if strata:
        ax1 = axes[1]
        ax1.bar(strata, [report.strata[s]["hr10"] for s in strata], color="tab:green")
        ax1.set_ylim(0, 1)
        ax1.set_title("HR@10 by stratum")
        ax1.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep_figure(curve: list[tuple[int, float]], path: str) -> None:
    sizes = [s for s, _ in curve]
    hr10 = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, hr10, "o-", color="tab:red")
    ax.set_xlabel("candidate pool size")
    ax.set_ylabel("HR@10")
    ax.set_ylim(0, 1)
    ax.set_title("Ranking quality vs. pool size")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
