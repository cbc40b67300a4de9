"""Tracking-by-detection with Hungarian assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..geometry import PowerLine3D
from .detection import CONFIDENCE_GATE, Detection


def hungarian(cost) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-cost assignment of a rectangular matrix.

    Returns row indices, column indices and the total cost summed in row
    order.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost must be a matrix")
    if C.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), 0.0
    rows, cols = linear_sum_assignment(C)
    total = 0.0
    for r, c in zip(rows, cols):
        total += C[r, c]
    return rows, cols, total


@dataclass(frozen=True)
class Track:
    id: int
    detection: Detection
    age: int = 1
    misses: int = 0
    world_line: PowerLine3D | None = None


@dataclass(frozen=True)
class TrackSet:
    tracks: tuple[Track, ...] = ()
    next_id: int = 0

    def get(self, track_id: int) -> Track | None:
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.tracks]

    def with_world_line(self, track_id: int, line: PowerLine3D) -> "TrackSet":
        return replace(self, tracks=tuple(replace(t, world_line=line) if t.id == track_id else t for t in self.tracks))


def association_cost(tracks, detections, width: int, height: int) -> np.ndarray:
    """Normalized centre displacement plus normalized box-area difference."""
    diag = math.hypot(width, height)
    area = float(width * height)
    C = np.zeros((len(tracks), len(detections)))
    for i, t in enumerate(tracks):
        for j, d in enumerate(detections):
            du = t.detection.center[0] - d.center[0]
            dv = t.detection.center[1] - d.center[1]
            C[i, j] = math.hypot(du, dv) / diag + abs(t.detection.area - d.area) / area
    return C


@dataclass(frozen=True)
class AssociationConfig:
    max_misses: int = 3
    gate: float = 0.25  # assignments costlier than this are treated as unmatched
    confidence_gate: float = CONFIDENCE_GATE


def associate(
    prev: TrackSet,
    detections: list[Detection],
    width: int,
    height: int,
    config: AssociationConfig = AssociationConfig(),
) -> TrackSet:
    """Update tracks with the current frame's detections.

    Matched tracks take the new detection; unmatched tracks accumulate a
    miss and are dropped once the miss budget is exceeded; unmatched
    detections start new tracks with fresh IDs.
    """
    dets = [d for d in detections if d.confidence > config.confidence_gate]
    tracks = list(prev.tracks)
    C = association_cost(tracks, dets, width, height)
    rows, cols, _ = hungarian(C)
    matched_t, matched_d = {}, set()
    for r, c in zip(rows, cols):
        if C[r, c] <= config.gate:
            matched_t[r] = c
            matched_d.add(c)
    out = []
    for i, t in enumerate(tracks):
        if i in matched_t:
            out.append(replace(t, detection=dets[matched_t[i]], age=t.age + 1, misses=0))
        elif t.misses + 1 <= config.max_misses:
            out.append(replace(t, age=t.age + 1, misses=t.misses + 1))
    next_id = prev.next_id
    for j, d in enumerate(dets):
        if j not in matched_d:
            out.append(Track(next_id, d))
            next_id += 1
    return TrackSet(tuple(out), next_id)
