"""Report figures rendered alongside the delimited outputs.

Uses the Agg backend and strips varying PNG metadata so repeated runs of
the same config produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .aggregate import AggregationResult
from .evaluate import CocoReport, F1Report, PRCurve
from .matrix import ObjectRecord
from .model import ResponseLabel, label_name

#: Severity palette: green empty, yellow minor, orange significant, red catastrophic.
LABEL_COLORS = {
    ResponseLabel.EMPTY: "#2ca02c",
    ResponseLabel.MINOR: "#ffdd33",
    ResponseLabel.SIGNIFICANT: "#ff8c00",
    ResponseLabel.CATASTROPHIC: "#d62728",
}

_PNG_META = {"metadata": {"Software": None}}
_MAX_MAP_SUBJECTS = 24


def _save(fig, path) -> None:
    fig.savefig(path, dpi=110, **_PNG_META)
    plt.close(fig)


def save_pr_curve(curve: PRCurve, path, title: str = "detections") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    if len(curve.recalls):
        ax.step(curve.recalls, curve.precisions, where="post", color="#1f77b4")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"{title} (AP {curve.ap * 100:.1f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_f1_bars(report: F1Report, path, title: str = "per-class F1") -> None:
    labels = [c for c in ResponseLabel]
    values = [report.per_class[c] for c in labels]
    colors = [LABEL_COLORS[c] for c in labels]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([label_name(c) for c in labels], values, color=colors)
    ax.axhline(report.weighted_average, color="k", linestyle="--", linewidth=1,
               label=f"weighted avg {report.weighted_average:.1f}")
    ax.set_ylabel("F1 (%)")
    ax.set_ylim(0, 105)
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def save_coco_bars(report: CocoReport, path) -> None:
    names = ["AP", "AP50", "AP75", "APs", "APm", "APl"]
    values = [report.ap, report.ap50, report.ap75,
              report.ap_small, report.ap_medium, report.ap_large]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    shown = [max(v, 0.0) for v in values]
    bars = ax.bar(names, shown, color="#1f77b4")
    for bar, v in zip(bars, values):
        note = "n/a" if v < 0 else f"{v:.1f}"
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 1, note,
                ha="center", fontsize=8)
    ax.set_ylabel("AP (%)")
    ax.set_ylim(0, 108)
    ax.set_title("COCO AP suite")
    fig.tight_layout()
    _save(fig, path)


def save_threshold_sweep(rows: list[tuple[float, float]], best_theta: float, path) -> None:
    thetas = [t for t, _ in rows]
    f1s = [f for _, f in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thetas, f1s, marker="o", color="#1f77b4")
    ax.axvline(best_theta, color="#d62728", linestyle="--", linewidth=1,
               label=f"best theta {best_theta:.3f}")
    ax.set_xlabel("mask threshold")
    ax.set_ylabel("detection F1 (%)")
    ax.set_title("threshold sweep")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_severity_map(result: AggregationResult, objects: list[ObjectRecord], path) -> None:
    """Object boxes colored by consensus label, one panel per subject."""
    by_id = {obj.object_id: obj for obj in objects}
    subjects: dict[str, list[tuple[ObjectRecord, ResponseLabel]]] = {}
    for i, object_id in enumerate(result.objects):
        obj = by_id[object_id]
        subjects.setdefault(obj.subject_id, []).append((obj, result.hard_labels[i]))
    shown = sorted(subjects)[:_MAX_MAP_SUBJECTS]
    if not shown:
        fig, _ = plt.subplots(figsize=(4, 3))
        _save(fig, path)
        return
    cols = min(4, len(shown))
    rows = -(-len(shown) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 3 * rows), squeeze=False)
    for ax in axes.flat:
        ax.set_axis_off()
    for ax, subject in zip(axes.flat, shown):
        ax.set_axis_on()
        ax.set_title(subject, fontsize=8)
        for obj, label in subjects[subject]:
            b = obj.bbox
            ax.add_patch(Rectangle((b.min_x, b.min_y), b.width, b.height,
                                   facecolor=LABEL_COLORS[label], edgecolor="k", linewidth=0.5))
        ax.autoscale_view()
        ax.set_aspect("equal")
        ax.invert_yaxis()  # raster row order: y grows downward
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    _save(fig, path)
