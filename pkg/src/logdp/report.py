"""Figures written next to the line-delimited artifacts."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
# keeps PNG bytes stable between runs
_META = {"Software": None}


def _figsize(width=6.0, ratio=0.5):
    return (width, width * ratio)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_thresholds(bundle, path):
    """Threshold per event, coloured by the kind of pattern model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        dependent = set(bundle.dependent_events)
        x = np.arange(len(bundle.event_ids))
        t = bundle.thresholds.values
        colors = ["tab:blue" if e in dependent else "tab:gray" for e in bundle.event_ids]
        ax.bar(x, t, color=colors)
        ax.set_xticks(x)
        ax.set_xticklabels([str(e) for e in bundle.event_ids], rotation=90 if len(x) > 30 else 0)
        ax.set_xlabel("event")
        ax.set_ylabel("threshold (counts)")
        handles = [
            plt.Rectangle((0, 0), 1, 1, color="tab:blue", label="dependency"),
            plt.Rectangle((0, 0), 1, 1, color="tab:gray", label="proximity"),
        ]
        ax.legend(handles=handles, frameon=False)
        ax.set_title(f"thresholds (margin {bundle.margin:g})")
        return _save(fig, path)


def plot_violations(records, path):
    """How often each event's threshold was exceeded across a verdict file."""
    counts = {}
    for r in records:
        for v in r.get("violations", ()):
            counts[v["event_id"]] = counts.get(v["event_id"], 0) + 1
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        events = sorted(counts)
        ax.bar(range(len(events)), [counts[e] for e in events], color="tab:red")
        ax.set_xticks(range(len(events)))
        ax.set_xticklabels([str(e) for e in events])
        ax.set_xlabel("event")
        ax.set_ylabel("violations")
        flagged = sum(bool(r.get("is_anomaly")) for r in records)
        ax.set_title(f"{flagged} of {len(records)} sequences flagged")
        return _save(fig, path)


def plot_confusion(metrics, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize(3.6, 1.0))
        cm = np.array([[metrics.tn, metrics.fp], [metrics.fn, metrics.tp]])
        ax.imshow(cm, cmap="Blues")
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cm.max() / 2 else "black")
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["normal", "anomaly"])
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["normal", "anomaly"])
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        ax.set_title(f"P {metrics.precision:.3f}  R {metrics.recall:.3f}  F1 {metrics.f1:.3f}")
        return _save(fig, path)
