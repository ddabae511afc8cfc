"""Delimited report files and the matplotlib figures rendered next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport, RankRecord, kappa_matrix
from .model import Parameters
from .train import EpochStats


def write_history_tsv(path, history: list[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tvalid_map\tseconds\n")
        for h in history:
            fh.write(f"{h.epoch}\t{h.train_loss!r}\t{h.valid_map!r}\t{h.seconds:.3f}\n")


def write_report_tsv(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tvalue\tinstances\n")
        for name, value in report.metric_rows():
            fh.write(f"{name}\t{value!r}\t{report.count}\n")
        if report.skipped:
            fh.write(f"skipped_users\t{report.skipped}\t{report.count}\n")


def write_ranks_tsv(path, records: list[RankRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id\tprev_poi\ttarget_poi\ttarget_ts\trank\tmode\n")
        for r in records:
            fh.write(f"{r.user_id}\t{r.prev_poi_id}\t{r.target_poi_id}\t{r.target_ts}\t{r.rank}\t{r.mode}\n")


def write_dims_txt(path, params: Parameters, top_n: int) -> None:
    from .evaluation import dimension_keywords

    dim = params["W3"].shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dim):
            fh.write(f"# dimension {i}\n")
            for word, kappa in dimension_keywords(i, top_n, params):
                fh.write(f"{word}\t{kappa!r}\n")
            fh.write("\n")


def save_history_figure(path, history: list[EpochStats]) -> None:
    epochs = [h.epoch for h in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(epochs, [h.train_loss for h in history], marker="o", ms=3)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("train loss")
    axes[1].plot(epochs, [h.valid_map for h in history], marker="o", ms=3, color="tab:orange")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("validation MAP")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report_figure(path, report: EvalReport) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    names = [n for n, _ in report.metric_rows()]
    values = [v for _, v in report.metric_rows()]
    axes[0].bar(names, values, color="tab:blue")
    axes[0].set_ylim(0, 1)
    axes[0].set_ylabel("value")
    ranks = np.asarray(report.ranks)
    bins = min(50, int(ranks.max()))
    axes[1].hist(ranks, bins=max(bins, 1), color="tab:gray")
    axes[1].set_xlabel("rank of true POI")
    axes[1].set_ylabel("instances")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_dims_figure(path, params: Parameters) -> None:
    _, kappa = kappa_matrix(params)
    fig, ax = plt.subplots(figsize=(8, 4))
    im = ax.imshow(kappa.T, aspect="auto", cmap="viridis")
    ax.set_xlabel("meta word (dense id)")
    ax.set_ylabel("hidden dimension")
    fig.colorbar(im, ax=ax, label="preference")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
