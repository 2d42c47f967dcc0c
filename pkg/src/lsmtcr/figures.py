"""Figure rendering for reports and training logs.

Every CSV the report path writes gets a PNG sibling: grouped bars for the
diversity battery, a composite bar chart, a similarity bar panel, and
loss/learning-rate curves for training logs. Rendering uses the Agg backend
and fixed metadata so repeated runs produce identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import DIVERSITY_FIELDS, DiversityReport, SimilarityReport  # noqa: E402

_PNG_META = {"Software": "lsmtcr"}


def _save(fig, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def diversity_figure(reports: list[DiversityReport], path: str | Path) -> Path:
    """Grouped bars: one cluster per metric, one bar per condition, plus composite."""
    n_cond = len(reports)
    fig, (ax, axc) = plt.subplots(
        1, 2, figsize=(11, 4), gridspec_kw={"width_ratios": [4, 1]})
    width = 0.8 / n_cond
    for i, rep in enumerate(reports):
        xs = [m + i * width for m in range(len(DIVERSITY_FIELDS))]
        values = [0.0 if math.isnan(v) else v for v in rep.values()]
        ax.bar(xs, values, width=width, label=rep.condition)
    ax.set_xticks([m + 0.4 - width / 2 for m in range(len(DIVERSITY_FIELDS))])
    ax.set_xticklabels(DIVERSITY_FIELDS, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("metric value")
    ax.set_title("diversity metrics by condition")
    ax.legend(fontsize=8)

    composites = [rep.composite for rep in reports]
    axc.bar(range(n_cond), [0.0 if math.isnan(c) else c for c in composites])
    axc.set_xticks(range(n_cond))
    axc.set_xticklabels([r.condition for r in reports], rotation=30, ha="right", fontsize=8)
    axc.set_ylim(0, 1)
    axc.set_title("composite")
    fig.tight_layout()
    return _save(fig, path)


def similarity_figure(report: SimilarityReport, extras: dict[str, float], path: str | Path) -> Path:
    """Bar panel for the aligned-pair similarity metrics (plus k-mer divergences)."""
    labels = ["exact_match", "norm_hamming", "norm_levenshtein", "jaccard3"]
    values = [report.exact_match_rate, report.mean_norm_hamming,
              report.mean_norm_levenshtein, report.jaccard3]
    for key in sorted(extras):
        labels.append(key)
        values.append(extras[key])
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 2, 4))
    ax.bar(range(len(labels)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("value")
    ax.set_title("full-length similarity to reference")
    fig.tight_layout()
    return _save(fig, path)


def training_curve_figure(log_rows: list[tuple[int, float, float]], path: str | Path) -> Path:
    """Loss per optimization step with the learning-rate schedule on a twin axis."""
    steps = [r[0] for r in log_rows]
    losses = [r[1] for r in log_rows]
    rates = [r[2] for r in log_rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(steps, rates, lw=1.0, color="tab:orange", label="lr")
    ax2.set_ylabel("learning rate", color="tab:orange")
    ax.set_title("training loss and learning rate")
    fig.tight_layout()
    return _save(fig, path)


def length_histogram_figure(lengths_by_condition: dict[str, list[int]],
                            reference: list[int], path: str | Path) -> Path:
    """Length distributions of generated sequences against the reference corpus."""
    fig, ax = plt.subplots(figsize=(7, 4))
    all_lengths = [l for ls in lengths_by_condition.values() for l in ls] + list(reference)
    lo, hi = min(all_lengths), max(all_lengths)
    bins = range(lo, hi + 2)
    ax.hist(reference, bins=bins, density=True, alpha=0.35, label="reference", color="gray")
    for name, ls in sorted(lengths_by_condition.items()):
        ax.hist(ls, bins=bins, density=True, histtype="step", lw=1.5, label=name)
    ax.set_xlabel("sequence length")
    ax.set_ylabel("density")
    ax.set_title("length distributions")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
