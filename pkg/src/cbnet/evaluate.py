"""Post-processing of probability maps and instance-level scoring.

The matching emulates a proof-reader: a segment is accepted when it sits on
one true cell at a sensible size; merges, splits, and badly sized segments
are rejected. Every threshold is a parameter of :class:`MatchRules`.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .imageio import write_pnm
from .morphology import (InstanceLabeling, connected_components, disk_element, fill_holes, opening,
                         square_element)


def postprocess(prob, threshold=0.75, disk_radius=5, square_size=3):
    """Threshold, open with a disk, open with a square, fill holes."""
    mask = np.asarray(prob, dtype=np.float64) >= threshold
    mask = opening(mask, disk_element(disk_radius))
    mask = opening(mask, square_element(square_size))
    return fill_holes(mask)


@dataclass
class MatchRules:
    cover: float = 0.5        # share of a true cell a segment must overlap to claim it
    too_small: float = 0.5    # segment area below this fraction of the cell -> false negative
    too_large: float = 2.0    # segment area above this multiple of the cell -> false detection


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    pred_classes: dict = field(default_factory=dict)   # pred id -> class
    gt_classes: dict = field(default_factory=dict)     # gt id -> class

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def summary(self):
        counts = {}
        for c in list(self.pred_classes.values()):
            counts[f"pred:{c}"] = counts.get(f"pred:{c}", 0) + 1
        for c in list(self.gt_classes.values()):
            counts[f"gt:{c}"] = counts.get(f"gt:{c}", 0) + 1
        return counts


def _as_labeling(x):
    if isinstance(x, InstanceLabeling):
        return x
    labels = np.asarray(x, dtype=np.int64)
    return InstanceLabeling(labels, int(labels.max()) if labels.size else 0)


def overlap_matrix(pred, gt):
    """``[pred.count + 1, gt.count + 1]`` pixel counts; row/column 0 is background."""
    idx = pred.labels.ravel() * (gt.count + 1) + gt.labels.ravel()
    return np.bincount(idx, minlength=(pred.count + 1) * (gt.count + 1)).reshape(pred.count + 1, gt.count + 1)


def match_instances(pred, gt, rules=None):
    """Classify every segment and true cell; each true cell ends as exactly one TP or FN.

    Per segment P and true cell G with overlap ``|P ∩ G|``:

    * P covering ``>= cover`` of two or more cells is a false merge; those cells are FN.
    * Otherwise P claims the cell with the strictly largest overlap, provided P
      covers ``>= cover`` of it or lies ``>= cover`` inside it; if no such cell
      exists P is spurious.
    * A cell claimed by two or more segments is falsely split: the segments are
      FP and the cell FN.
    * A single claim with ``|P| < too_small * |G|`` makes G a false negative
      (P is not counted as a detection); ``|P| > too_large * |G|`` makes P a
      false detection and G a false negative; otherwise it is a true positive.
    * Unclaimed cells are missed.
    """
    rules = rules or MatchRules()
    pred, gt = _as_labeling(pred), _as_labeling(gt)
    if pred.labels.shape != gt.labels.shape:
        raise ContractError(f"extent mismatch: prediction {pred.labels.shape} vs ground truth {gt.labels.shape}")
    ov = overlap_matrix(pred, gt)[1:, 1:].astype(np.float64)
    p_area = pred.areas().astype(np.float64)
    g_area = gt.areas().astype(np.float64)
    pred_cls, gt_cls = {}, {}
    claims = {}
    for p in range(pred.count):
        covered = np.nonzero(ov[p] >= rules.cover * g_area)[0] if gt.count else []
        covered = [g for g in covered if ov[p, g] > 0]
        if len(covered) >= 2:
            pred_cls[p + 1] = "false-merge"
            for g in covered:
                gt_cls[g + 1] = "false-merge"
            continue
        if gt.count == 0 or ov[p].max() == 0:
            pred_cls[p + 1] = "spurious"
            continue
        best = int(ov[p].argmax())
        if np.count_nonzero(ov[p] == ov[p, best]) > 1:
            pred_cls[p + 1] = "spurious"
            continue
        if ov[p, best] >= rules.cover * g_area[best] or ov[p, best] >= rules.cover * p_area[p]:
            claims.setdefault(best, []).append(p)
        else:
            pred_cls[p + 1] = "spurious"
    for g, ps in claims.items():
        if gt_cls.get(g + 1) == "false-merge":
            # the cell is already lost to a merge; extra segments on it are rejected too
            for p in ps:
                pred_cls[p + 1] = "false-split"
            continue
        if len(ps) >= 2:
            gt_cls[g + 1] = "false-split"
            for p in ps:
                pred_cls[p + 1] = "false-split"
            continue
        p = ps[0]
        if p_area[p] < rules.too_small * g_area[g]:
            gt_cls[g + 1] = pred_cls[p + 1] = "too-small"
        elif p_area[p] > rules.too_large * g_area[g]:
            gt_cls[g + 1] = pred_cls[p + 1] = "too-large"
        else:
            gt_cls[g + 1] = pred_cls[p + 1] = "matched"
    for g in range(1, gt.count + 1):
        gt_cls.setdefault(g, "missed")
    tp = sum(1 for c in gt_cls.values() if c == "matched")
    fn = gt.count - tp
    fp = sum(1 for c in pred_cls.values() if c not in ("matched", "too-small"))
    return MatchReport(tp, fp, fn, dict(sorted(pred_cls.items())), dict(sorted(gt_cls.items())))


def pixel_metrics(pred_mask, gt_mask):
    """``(IoU, pixel accuracy)``; IoU is 1 when both masks are empty."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise ContractError(f"extent mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    iou = 1.0 if union == 0 else np.count_nonzero(a & b) / union
    acc = np.count_nonzero(a == b) / a.size
    return iou, acc


CSV_FIELDS = ["scene", "tp", "fp", "fn", "precision", "recall", "f1", "iou", "accuracy"]


def report_row(name, report, iou, acc):
    return {"scene": name, "tp": report.tp, "fp": report.fp, "fn": report.fn,
            "precision": f"{report.precision:.6f}", "recall": f"{report.recall:.6f}",
            "f1": f"{report.f1:.6f}", "iou": f"{iou:.6f}", "accuracy": f"{acc:.6f}"}


def write_report_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def format_report(name, report, iou=None, acc=None):
    lines = [f"{name}: TP={report.tp} FP={report.fp} FN={report.fn} "
             f"precision={report.precision:.4f} recall={report.recall:.4f} F1={report.f1:.4f}"]
    if iou is not None:
        lines.append(f"  pixel IoU={iou:.4f} accuracy={acc:.4f}")
    for key, n in sorted(report.summary().items()):
        lines.append(f"  {key}: {n}")
    return "\n".join(lines)


# overlay colours follow the usual proof-reading arrows
COLOURS = {
    "matched": (0, 200, 0),
    "missed": (255, 255, 0),        # false negative
    "too-small": (255, 255, 0),
    "spurious": (255, 0, 0),        # false positive
    "too-large": (255, 0, 0),
    "false-split": (0, 80, 255),
    "false-merge": (180, 0, 220),
}


def _outline(mask):
    inner = mask.copy()
    inner[1:, :] &= mask[:-1, :]
    inner[:-1, :] &= mask[1:, :]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    return mask & ~inner


def overlay(image, pred, gt, report):
    """RGB uint8 image: input dimmed, true cells outlined, segments coloured by class."""
    pred, gt = _as_labeling(pred), _as_labeling(gt)
    image = np.asarray(image)
    rgb = np.zeros(gt.labels.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.rint(image[0] * 127)
    rgb[..., 1] = np.rint(image[1] * 127)
    for gid, cls in report.gt_classes.items():
        colour = COLOURS[cls] if cls in ("missed", "too-small") else (255, 255, 255)
        rgb[_outline(gt.labels == gid)] = colour
    for pid, cls in report.pred_classes.items():
        rgb[_outline(pred.labels == pid)] = COLOURS[cls]
    return rgb


def write_overlay(path, image, pred, gt, report):
    write_pnm(path, overlay(image, pred, gt, report))
