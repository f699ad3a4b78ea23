"""Report figures (matplotlib, file output only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .questengine.program import QUESTION_TYPES  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_eval_report(report, path) -> Path:
    """Per-type accuracy with the with/without temporal relation split."""
    types = [t for t in QUESTION_TYPES if t in report.per_type_accuracy]
    x = np.arange(len(types))
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(x - 0.27, [100 * report.per_type_accuracy[t] for t in types], 0.27, label="all")
    for off, key, lab in ((0.0, "with_relation", "with relation"),
                          (0.27, "without_relation", "without relation")):
        vals = []
        for t in types:
            d = report.relation_split.get(t)
            v = None if d == "N/A" or d is None else d[key]
            vals.append(np.nan if v is None else 100 * v)
        ax.bar(x + off, vals, 0.27, label=lab)
    ax.axhline(100 * report.overall_accuracy, color="k", lw=0.8, ls="--", label="overall")
    ax.set_xticks(x, [t.replace("_", "\n") for t in types], fontsize=7)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, ncol=4)
    ax.set_title(report.name or "evaluation")
    return _save(fig, path)


def plot_history(history, path) -> Path:
    ep = [r["epoch"] for r in history]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(ep, [r["train_loss"] for r in history], label="train")
    a1.plot(ep, [r["val_loss"] for r in history], label="val")
    a1.set_xlabel("epoch")
    a1.set_ylabel("cross-entropy")
    a1.legend()
    a2.plot(ep, [100 * r["val_acc"] for r in history], label="val acc")
    if all("train_acc" in r for r in history):
        a2.plot(ep, [100 * r["train_acc"] for r in history], label="train acc")
    a2.set_xlabel("epoch")
    a2.set_ylabel("accuracy (%)")
    a2.legend()
    return _save(fig, path)


def plot_matrix(rows, path) -> Path:
    rows = [r for r in rows if r.get("overall")]
    fig, ax = plt.subplots(figsize=(8, 0.4 * len(rows) + 1.5))
    y = np.arange(len(rows))
    ax.barh(y, [100 * r["overall"][0] for r in rows], xerr=[100 * r["overall"][1] for r in rows],
            color="tab:blue", alpha=0.8)
    ax.set_yticks(y, [r["config"] for r in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("overall accuracy (%), mean ± std over seeds")
    return _save(fig, path)
