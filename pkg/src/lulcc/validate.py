"""Agreement between predicted and actual land-cover grids."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .grid import I, CategoricalGrid, GridError, countable, validate_alignment

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

TP_COLOR = (0, 255, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 0, 255)
TN_COLOR = (255, 255, 255)
MASK_COLOR = (0, 0, 0)


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[int, ...]
    counts: np.ndarray  # rows = actual, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class BlobStats:
    count: int
    total_area: int
    mean_area: float
    largest_area: int

    def to_json(self) -> dict:
        return {"count": self.count, "total_area": self.total_area,
                "mean_area": self.mean_area, "largest_area": self.largest_area}


@dataclass(frozen=True)
class BlobReport:
    true_positive: BlobStats
    false_positive: BlobStats
    false_negative: BlobStats

    def to_json(self) -> dict:
        return {"true_positive": self.true_positive.to_json(),
                "false_positive": self.false_positive.to_json(),
                "false_negative": self.false_negative.to_json()}


def confusion_matrix(actual: CategoricalGrid, predicted: CategoricalGrid, classes: Sequence[int],
                     mask: CategoricalGrid | None = None) -> ConfusionMatrix:
    validate_alignment([actual, predicted, mask])
    ok = countable(actual, mask) & predicted.valid
    a, p = actual.cells[ok], predicted.cells[ok]
    if a.size == 0:
        raise GridError("no unmasked cells to compare")
    n = len(classes)
    lut = {int(c): k for k, c in enumerate(classes)}
    bad = sorted((set(np.unique(a).tolist()) | set(np.unique(p).tolist())) - set(lut))
    if bad:
        raise GridError(f"unexpected class code(s) {bad}")
    ia = np.array([lut[v] for v in a.tolist()], dtype=np.int64)
    ip = np.array([lut[v] for v in p.tolist()], dtype=np.int64)
    counts = np.bincount(ia * n + ip, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(tuple(int(c) for c in classes), counts)


def precision_recall(cm: ConfusionMatrix) -> dict[int, tuple[float | None, float | None]]:
    """Per-class ``(precision, recall)``; ``None`` marks an undefined 0/0 ratio."""
    c = cm.counts
    out = {}
    for k, code in enumerate(cm.classes):
        col, row = c[:, k].sum(), c[k, :].sum()
        prec = float(c[k, k] / col) if col else None
        rec = float(c[k, k] / row) if row else None
        out[code] = (prec, rec)
    return out


def _categories(actual, predicted, urban_code, mask):
    validate_alignment([actual, predicted, mask])
    ok = countable(actual, mask) & predicted.valid
    au = (actual.cells == urban_code) & ok
    pu = (predicted.cells == urban_code) & ok
    return au & pu, pu & ~au, au & ~pu, ok


def label_components(binary: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels (0 = background) and component count."""
    labels, n = ndimage.label(binary, structure=EIGHT_CONNECTED)
    return labels, int(n)


def _blob_stats(binary: np.ndarray) -> BlobStats:
    labels, n = label_components(binary)
    if n == 0:
        return BlobStats(0, 0, 0.0, 0)
    areas = np.bincount(labels.ravel())[1:]
    return BlobStats(n, int(areas.sum()), float(areas.mean()), int(areas.max()))


def blob_analysis(actual: CategoricalGrid, predicted: CategoricalGrid, urban_code: int = I,
                  mask: CategoricalGrid | None = None) -> BlobReport:
    tp, fp, fn, _ = _categories(actual, predicted, urban_code, mask)
    return BlobReport(_blob_stats(tp), _blob_stats(fp), _blob_stats(fn))


def render_overlay(actual: CategoricalGrid, predicted: CategoricalGrid, urban_code: int,
                   path: str | Path, mask: CategoricalGrid | None = None) -> None:
    """Write a binary PPM (P6), one pixel per cell, colored by TP/FP/FN/TN."""
    tp, fp, fn, ok = _categories(actual, predicted, urban_code, mask)
    img = np.empty(actual.cells.shape + (3,), dtype=np.uint8)
    img[:] = MASK_COLOR
    img[ok] = TN_COLOR
    img[tp] = TP_COLOR
    img[fp] = FP_COLOR
    img[fn] = FN_COLOR
    h, w = actual.cells.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise GridError(f"{path}: unwritable path: {exc}") from None


def validation_report(actual: CategoricalGrid, predicted: CategoricalGrid, classes: Sequence[int],
                      urban_code: int = I, mask: CategoricalGrid | None = None,
                      cramers: dict[str, float] | None = None) -> dict:
    """JSON-ready summary: confusion counts, precision/recall, accuracy, blobs, Cramér's V."""
    cm = confusion_matrix(actual, predicted, classes, mask)
    pr = precision_recall(cm)
    return {
        "confusion": cm.to_json(),
        "overall_accuracy": cm.overall_accuracy(),
        "precision_recall": {str(k): {"precision": p, "recall": r} for k, (p, r) in pr.items()},
        "blobs": blob_analysis(actual, predicted, urban_code, mask).to_json(),
        "cramers_v": dict(cramers or {}),
    }
