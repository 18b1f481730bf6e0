"""Confusion-matrix evaluation metrics for segmentation and change maps."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricReport", "confusion_matrix", "metrics_report", "one_hot"]


def one_hot(labels, num_classes, dtype=np.float32):
    """Expand an integer raster to per-class indicator channels.

    (H, W) input gains a leading class axis; (N, H, W) input gains the class
    axis after the batch axis.
    """
    labels = np.asarray(labels)
    eye = np.eye(num_classes, dtype=dtype)
    planes = eye[labels.reshape(-1)].reshape(labels.shape + (num_classes,))
    return np.moveaxis(planes, -1, labels.ndim - 2)


def confusion_matrix(pred, truth, num_classes):
    """Counts indexed [true class, predicted class]."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    flat = truth * num_classes + pred
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


@dataclass
class MetricReport:
    """Scores in [0, 1]; segmentation carries per-class F1, change carries P/R."""

    task: str
    oa: float
    class_f1: dict = field(default_factory=dict)
    mean_f1: float = 0.0
    miou: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    iou: float = 0.0

    def to_text(self):
        lines = [f"task={self.task}", f"oa={self.oa!r}"]
        if self.task == "seg":
            lines += [f"mean_f1={self.mean_f1!r}", f"miou={self.miou!r}"]
            lines += [f"f1_class_{c}={v!r}" for c, v in sorted(self.class_f1.items())]
        else:
            lines += [f"precision={self.precision!r}", f"recall={self.recall!r}",
                      f"f1={self.f1!r}", f"iou={self.iou!r}"]
        return "\n".join(lines) + "\n"


def metrics_report(pred, truth, task="seg", num_classes=None):
    """Score a predicted label raster against the truth.

    Segmentation reports OA, per-class F1, mean F1, and mean IoU; classes
    absent from both rasters are left out of the means. Change detection
    reports precision/recall/F1/IoU of the change class, with empty
    denominators scored as zero.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        from .errors import DimensionError
        raise DimensionError(
            f"metrics_report shape mismatch: {pred.shape} vs {truth.shape}")
    if task == "cd":
        num_classes = 2
    elif num_classes is None:
        num_classes = int(max(pred.max(initial=0), truth.max(initial=0))) + 1
    counts = confusion_matrix(pred, truth, num_classes)
    total = int(pred.size)
    correct = int(np.trace(counts))
    oa = correct / total
    if task == "cd":
        tp = int(counts[1, 1])
        fp = int(counts[0, 1])
        fn = int(counts[1, 0])
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        iou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
        return MetricReport(task="cd", oa=oa, precision=precision, recall=recall,
                            f1=f1, iou=iou)
    f1s, ious = {}, {}
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    for c in range(num_classes):
        tp = int(counts[c, c])
        fp = int(col[c]) - tp
        fn = int(row[c]) - tp
        if tp + fp + fn == 0:
            continue
        f1s[c] = 2 * tp / (2 * tp + fp + fn)
        ious[c] = tp / (tp + fp + fn)
    return MetricReport(task="seg", oa=oa, class_f1=f1s,
                        mean_f1=sum(f1s.values()) / len(f1s),
                        miou=sum(ious.values()) / len(ious))
