"""Chamfer-distance precision / recall for detected image lines."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def rasterize_segment(segment) -> np.ndarray:
    """Integer pixel coordinates covered by a segment, shape (n, 2), unique."""
    p = np.asarray(segment, dtype=float).reshape(2, 2)
    n = int(np.ceil(np.max(np.abs(p[1] - p[0])))) + 1
    t = np.linspace(0.0, 1.0, n)[:, None]
    pix = np.rint(p[0] + t * (p[1] - p[0])).astype(np.int64)
    return np.unique(pix, axis=0)


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean symmetric nearest-pixel distance between two pixel sets."""
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * (float(da.mean()) + float(db.mean()))


def chamfer_prf(predicted, ground_truth, tau: float = 5.0) -> tuple[float, float, float]:
    """Precision, recall and F1 of predicted segments against ground truth.

    Pairs are matched one-to-one greedily by ascending Chamfer distance; a
    matched pair with distance ``<= tau`` is a true positive.  Empty
    prediction or ground-truth sets give zero for the undefined ratios.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    pred = [rasterize_segment(s) for s in predicted]
    gt = [rasterize_segment(s) for s in ground_truth]
    pairs = sorted(
        (chamfer_distance(p, g), i, j) for i, p in enumerate(pred) for j, g in enumerate(gt)
    )
    used_p, used_g = set(), set()
    tp = 0
    for dist, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        if dist <= tau:
            tp += 1
    P = tp / len(pred) if pred else 0.0
    R = tp / len(gt) if gt else 0.0
    F = 2 * P * R / (P + R) if P + R > 0 else 0.0
    return P, R, F
