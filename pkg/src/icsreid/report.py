"""Report serialization and figure rendering.

JSON reports are written with sorted keys and no volatile fields, so a
re-run with the same config and seed produces byte-identical files.
Figures land next to the delimited outputs under ``figures/``.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricsReport


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_table(rows: dict[str, MetricsReport], path) -> None:
    """Tab-separated variant table plus an aligned plain-text rendering."""
    ranks = sorted(next(iter(rows.values())).cmc) if rows else []
    header = ["variant", "mAP"] + [f"rank{r}" for r in ranks] + ["assoc_precision", "assoc_recall"]
    lines = ["\t".join(header)]
    for name, report in rows.items():
        cells = [name, "%.4f" % report.mean_ap]
        cells += ["%.4f" % report.cmc[r] for r in ranks]
        if report.association_precision is None:
            cells += ["-", "-"]
        else:
            cells += ["%.4f" % report.association_precision,
                      "%.4f" % report.association_recall]
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_text_table(rows: dict[str, MetricsReport]) -> str:
    ranks = sorted(next(iter(rows.values())).cmc) if rows else []
    header = ["variant", "mAP"] + [f"R{r}" for r in ranks]
    widths = [max(len(header[0]), max((len(n) for n in rows), default=0))]
    widths += [8] * (len(header) - 1)
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for name, report in rows.items():
        cells = [name.ljust(widths[0]), ("%.4f" % report.mean_ap).ljust(8)]
        cells += [("%.4f" % report.cmc[r]).ljust(8) for r in ranks]
        out.append("  ".join(cells))
    return "\n".join(out) + "\n"


def render_loss_figure(epoch_means: dict[str, list[float]], title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in epoch_means.items():
        ax.plot(range(len(values)), values, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_cmc_figure(curves: dict[str, dict[int, float]], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, cmc in curves.items():
        ranks = sorted(cmc)
        ax.plot(ranks, [cmc[r] for r in ranks], marker="o", label=label)
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("cumulative matching characteristic")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_figure(rows: dict[str, MetricsReport], path) -> None:
    names = list(rows)
    maps = [rows[n].mean_ap for n in names]
    rank1 = [rows[n].cmc.get(1, float("nan")) for n in names]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.38
    ax.bar([i - width / 2 for i in x], maps, width=width, label="mAP")
    ax.bar([i + width / 2 for i in x], rank1, width=width, label="rank-1")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("model variants on the shared benchmark")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
