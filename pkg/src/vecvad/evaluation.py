"""Frame-level ROC / AUROC / EER and result reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.metrics import auc, roc_curve


@dataclass
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auroc: float
    eer: float


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocResult:
    """ROC with one point per distinct score; AUROC by the trapezoid rule (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-D")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise ValueError("ROC needs both normal (0) and anomalous (1) frames")
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    auroc = float(auc(fpr, tpr))
    result = RocResult(thresholds, tpr, fpr, auroc, float("nan"))
    result.eer = eer(result)
    return result


def eer(roc: RocResult) -> float:
    """Error rate where FPR equals 1 - TPR, interpolated linearly along the curve."""
    fpr, fnr = np.asarray(roc.fpr, float), 1.0 - np.asarray(roc.tpr, float)
    gap = fpr - fnr  # non-decreasing along the sweep
    hit = np.flatnonzero(gap >= 0)
    if hit.size == 0:
        return float(fpr[-1])
    k = hit[0]
    if gap[k] == 0 or k == 0:
        return float(fpr[k])
    # gap changes sign between k-1 and k
    t = -gap[k - 1] / (gap[k] - gap[k - 1])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def concatenated_roc(frame_scores: Mapping[str, np.ndarray],
                     labels: Mapping[str, np.ndarray]) -> RocResult:
    """One ROC over all frames of all videos (videos visited in ``frame_scores`` order)."""
    s, y = [], []
    for vid, values in frame_scores.items():
        if vid not in labels:
            raise KeyError(f"no labels for video {vid!r}")
        if len(labels[vid]) != len(values):
            raise ValueError(f"video {vid!r}: {len(values)} scores vs {len(labels[vid])} labels")
        s.append(np.asarray(values, float))
        y.append(np.asarray(labels[vid]))
    return roc_auc(np.concatenate(s), np.concatenate(y))


@dataclass
class ReportRow:
    dataset: str
    preset: str
    roc: RocResult


TABLE_HEADER = ("dataset", "preset", "auroc", "eer")


def format_row(row: ReportRow) -> str:
    return f"{row.dataset}\t{row.preset}\t{row.roc.auroc:.4f}\t{row.roc.eer:.4f}"


def emit_report(rows: Sequence[ReportRow], out_dir: str | Path, plot: bool = True) -> dict[str, Path]:
    """Writes ``results.tsv``, one ``roc_<dataset>_<preset>.csv`` per row, and per-dataset
    overlaid ROC plots. Returns the written paths."""
    if not rows:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    table = out_dir / "results.tsv"
    table.write_text("\t".join(TABLE_HEADER) + "\n" + "".join(format_row(r) + "\n" for r in rows))
    written["table"] = table

    for r in rows:
        path = out_dir / f"roc_{r.dataset}_{r.preset}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("fpr", "tpr"))
            w.writerows(zip(map(repr, r.roc.fpr.tolist()), map(repr, r.roc.tpr.tolist())))
        written[f"curve:{r.dataset}:{r.preset}"] = path

    if plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        for dataset in dict.fromkeys(r.dataset for r in rows):
            fig, ax = plt.subplots(figsize=(4.5, 4.5))
            for r in rows:
                if r.dataset == dataset:
                    ax.plot(r.roc.fpr, r.roc.tpr, label=f"{r.preset} (AUROC {r.roc.auroc:.3f})")
            ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
            ax.set(xlabel="false positive rate", ylabel="true positive rate", title=dataset,
                   xlim=(0, 1), ylim=(0, 1.01))
            ax.legend(loc="lower right", fontsize=8)
            fig.tight_layout()
            path = out_dir / f"roc_{dataset}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written[f"plot:{dataset}"] = path
    return written
