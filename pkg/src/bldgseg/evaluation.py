"""Pixel precision/recall and mass-center detection scoring."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .datapipe import _inside_even_odd
from .labels import signed_distance_transform, threshold_readout

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Metrics:
    precision: float
    recall: float
    true_detections: int
    false_alarms: int
    building_count: int

    def report(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def row(self, name: str) -> str:
        d = asdict(self)
        return "\t".join([name] + [str(d[k]) for k in TSV_COLUMNS[1:]])


TSV_COLUMNS = ["name", "precision", "recall", "true_detections", "false_alarms", "building_count"]


def _same_extent(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"prediction {a.shape} and ground truth {b.shape} differ in extent")
    return a, b


def precision_recall(pred, gt):
    pred, gt = _same_extent(pred, gt)
    tp = int((pred & gt).sum())
    npred, ngt = int(pred.sum()), int(gt.sum())
    if npred == 0:
        precision = 1.0 if ngt == 0 else 0.0
    else:
        precision = tp / npred
    recall = 1.0 if ngt == 0 else tp / ngt
    return precision, recall


def label_components(mask):
    """8-connected component labels (0 = background) and the component count."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels, n


def mass_centers(mask, min_area: int = 4):
    """(row, col) mean pixel coordinates of components with at least `min_area` pixels."""
    labels, n = label_components(mask)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(labels), labels, idx)
    rows, cols = np.indices(labels.shape)
    r = ndimage.mean(rows, labels, idx)
    c = ndimage.mean(cols, labels, idx)
    return [(float(rr), float(cc)) for rr, cc, a in zip(r, c, areas) if a >= min_area]


def detect_score(pred, gt_mask=None, gt_polygons=None, min_area: int = 4):
    """Count (TD, FA) of predicted component centers inside / outside ground truth.

    With `gt_mask`, a center falls in the pixel it rounds to. With
    `gt_polygons` (in the prediction's pixel frame), the center is offset to
    pixel-center coordinates and tested against the polygons.
    """
    if (gt_mask is None) == (gt_polygons is None):
        raise ValueError("give exactly one of gt_mask or gt_polygons")
    td = fa = 0
    pred = np.asarray(pred, dtype=bool)
    if gt_mask is not None:
        pred, gt = _same_extent(pred, gt_mask)
    for r, c in mass_centers(pred, min_area):
        if gt_mask is not None:
            ri, ci = int(np.floor(r + 0.5)), int(np.floor(c + 0.5))
            hit = bool(gt[ri, ci])
        else:
            px, py = np.array([c + 0.5]), np.array([r + 0.5])
            hit = any(_inside_even_odd(p.vertices, px, py)[0] for p in gt_polygons)
        if hit:
            td += 1
        else:
            fa += 1
    return td, fa


def evaluate(pred, gt, min_area: int = 4) -> Metrics:
    p, r = precision_recall(pred, gt)
    td, fa = detect_score(pred, gt_mask=gt, min_area=min_area)
    _, nb = label_components(gt)
    return Metrics(p, r, td, fa, nb)


def as_field(grid) -> np.ndarray:
    """Signed-distance field for a stored raster: 0/1 grids are masks, anything else is a field."""
    g = np.asarray(grid, dtype=np.float64)
    if np.isin(g, (0.0, 1.0)).all():
        return signed_distance_transform(g.astype(np.uint8))
    return g


def evaluate_fields(pred_field, gt_field, min_area: int = 4) -> Metrics:
    """Score a predicted field against a reference field.

    Pixel precision/recall compare the building readouts of both fields, so a
    prediction equal to the reference scores 1/1. Detection centers are tested
    against the reference footprint, i.e. building plus boundary band.
    """
    pred, _ = threshold_readout(np.asarray(pred_field))
    gt_building, gt_boundary = threshold_readout(np.asarray(gt_field))
    footprint = gt_building | gt_boundary
    p, r = precision_recall(pred, gt_building)
    td, fa = detect_score(pred, gt_mask=footprint, min_area=min_area)
    return Metrics(p, r, td, fa, label_components(footprint)[1])


def summarize(rows) -> Metrics:
    """Mean precision/recall and summed counts over per-image metrics."""
    rows = list(rows)
    if not rows:
        return Metrics(float("nan"), float("nan"), 0, 0, 0)
    return Metrics(
        float(np.mean([m.precision for m in rows])),
        float(np.mean([m.recall for m in rows])),
        sum(m.true_detections for m in rows),
        sum(m.false_alarms for m in rows),
        sum(m.building_count for m in rows),
    )
