"""Standard and sampled Hough transforms for straight image lines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import PolarImageLine


@dataclass(frozen=True)
class HoughGrid:
    """Accumulator layout; ``r`` is measured from ``origin`` (principal point)."""

    n_theta: int
    n_r: int
    r_max: float
    origin: tuple[float, float]

    def __post_init__(self):
        if self.n_theta < 2 or self.n_r < 2:
            raise ValueError("bin counts must be at least 2")

    @classmethod
    def for_image(cls, width: int, height: int, n_theta: int = 180, n_r: int | None = None, origin=None):
        if origin is None:
            origin = (width / 2.0, height / 2.0)
        ox, oy = origin
        r_max = max(math.hypot(cx, cy) for cx in (ox, width - 1 - ox) for cy in (oy, height - 1 - oy)) + 1.0
        if n_r is None:
            n_r = 2 * int(math.ceil(r_max)) + 1
        return cls(n_theta, n_r, r_max, (float(ox), float(oy)))

    @property
    def d_theta(self) -> float:
        return math.pi / self.n_theta

    @property
    def d_r(self) -> float:
        return 2.0 * self.r_max / (self.n_r - 1)

    @property
    def thetas(self) -> np.ndarray:
        return -math.pi / 2 + self.d_theta * np.arange(self.n_theta)

    @property
    def rs(self) -> np.ndarray:
        return -self.r_max + self.d_r * np.arange(self.n_r)


@dataclass(frozen=True)
class HoughLine:
    line: PolarImageLine
    votes: int
    segment: np.ndarray | None = None  # raster endpoints of the supporting edge pixels


def edge_points(edges: np.ndarray) -> np.ndarray:
    """Raster ``(u, v)`` coordinates of non-zero edge pixels, row-major order."""
    v, u = np.nonzero(edges)
    return np.stack([u, v], axis=1).astype(float)


def accumulate(points: np.ndarray, grid: HoughGrid) -> np.ndarray:
    """Vote counts, shape ``(n_theta, n_r)``."""
    acc_size = grid.n_theta * grid.n_r
    if len(points) == 0:
        return np.zeros((grid.n_theta, grid.n_r), dtype=np.int64)
    th = grid.thetas
    u = points[:, 0] - grid.origin[0]
    v = points[:, 1] - grid.origin[1]
    r = np.outer(u, np.cos(th)) + np.outer(v, np.sin(th))
    idx = np.rint((r + grid.r_max) / grid.d_r).astype(np.int64)
    np.clip(idx, 0, grid.n_r - 1, out=idx)
    flat = idx + grid.n_r * np.arange(grid.n_theta)
    return np.bincount(flat.ravel(), minlength=acc_size).reshape(grid.n_theta, grid.n_r)


def _local_maxima(acc: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of 3x3 local maxima; theta wraps with r mirrored."""
    padded = np.zeros((acc.shape[0] + 2, acc.shape[1] + 2), dtype=acc.dtype)
    padded[1:-1, 1:-1] = acc
    padded[0, 1:-1] = acc[-1, ::-1]
    padded[-1, 1:-1] = acc[0, ::-1]
    center = padded[1:-1, 1:-1]
    is_max = center >= threshold
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di : padded.shape[0] - 1 + di, 1 + dj : padded.shape[1] - 1 + dj]
            is_max &= center >= nb
    return np.argwhere(is_max)


def _same_branch(theta, r, theta_ref):
    if theta - theta_ref > math.pi / 2:
        return theta - math.pi, -r
    if theta - theta_ref < -math.pi / 2:
        return theta + math.pi, -r
    return theta, r


def _peaks_to_lines(acc, grid, threshold, max_lines, min_sep_theta, min_sep_r):
    peaks = _local_maxima(acc, threshold)
    if len(peaks) == 0:
        return []
    votes = acc[peaks[:, 0], peaks[:, 1]]
    order = np.lexsort((peaks[:, 1], peaks[:, 0], -votes))
    th_vals, r_vals = grid.thetas, grid.rs
    clusters: list[dict] = []
    for k in order:
        th, r = th_vals[peaks[k, 0]], r_vals[peaks[k, 1]]
        vt = int(votes[k])
        for c in clusters:
            t2, r2 = _same_branch(th, r, c["theta"])
            if abs(t2 - c["theta"]) <= min_sep_theta * grid.d_theta + 1e-12 and abs(r2 - c["r"]) <= min_sep_r * grid.d_r + 1e-12:
                c["members"].append((t2, r2, vt))
                break
        else:
            clusters.append({"theta": th, "r": r, "votes": vt, "members": [(th, r, vt)]})
    out = []
    for c in clusters[:max_lines]:
        m = np.array(c["members"])
        keep = m[:, 2] >= 0.5 * c["votes"]
        w = m[keep, 2]
        out.append((float(w @ m[keep, 0] / w.sum()), float(w @ m[keep, 1] / w.sum()), c["votes"]))
    return out


def refine_line(points: np.ndarray, line: PolarImageLine, origin, band: float, iterations: int = 2) -> PolarImageLine:
    """Total-least-squares fit to the edge pixels within ``band`` of ``line``.

    Both edge chains of a thick line fall inside the band, so the fit lands
    on the centreline.
    """
    rel = points - np.asarray(origin)
    for _ in range(iterations):
        near = np.abs(rel @ line.normal - line.r) <= band
        if np.count_nonzero(near) < 3:
            return line
        sel = rel[near]
        c = sel.mean(axis=0)
        _, vecs = np.linalg.eigh(np.cov((sel - c).T))
        n = vecs[:, 0]
        if n @ line.normal < 0:
            n = -n
        line = PolarImageLine(math.atan2(n[1], n[0]), float(n @ c))
    return line


def _segment(points: np.ndarray, line: PolarImageLine, origin, tol: float):
    if len(points) == 0:
        return None
    n = line.normal
    t = np.array([-n[1], n[0]])
    rel = points - np.asarray(origin)
    near = np.abs(rel @ n - line.r) <= tol
    if not np.any(near):
        return None
    s = rel[near] @ t
    ends = np.array([line.r * n + s.min() * t, line.r * n + s.max() * t])
    return ends + np.asarray(origin)


def hough_lines(
    edges: np.ndarray,
    n_theta: int = 180,
    n_r: int | None = None,
    threshold: int = 40,
    max_lines: int = 10,
    origin=None,
    min_sep_theta: int = 3,
    min_sep_r: int = 8,
    support_tol: float = 2.0,
    refine_band: float | None = 4.0,
    points: np.ndarray | None = None,
    exclusive: bool = True,
) -> list[HoughLine]:
    """Lines from an edge map, sorted by votes.

    Peaks are 3x3 local maxima of the accumulator.  Peaks closer than
    ``min_sep_theta`` / ``min_sep_r`` bins to a stronger one are merged into
    it (the two edge chains of a thick line), the merged line being the
    vote-weighted mean of its strong members.  With ``refine_band`` the
    result is polished by a total-least-squares fit to the voting pixels
    within that many pixels of it.  With ``exclusive`` a line is kept only if
    at least ``threshold`` of its supporting pixels are not already explained
    by a stronger line.
    """
    edges = np.asarray(edges)
    h, w = edges.shape
    grid = HoughGrid.for_image(w, h, n_theta, n_r, origin)
    all_points = edge_points(edges)
    pts = all_points if points is None else points
    acc = accumulate(pts, grid)
    found = _peaks_to_lines(acc, grid, threshold, max_lines, min_sep_theta, min_sep_r)
    rel = pts - np.asarray(grid.origin)
    claimed = np.zeros(len(pts), dtype=bool)
    claim_tol = max(support_tol, refine_band or 0.0)  # both edge chains of a thick line
    out = []
    for th, r, vt in found:
        line = PolarImageLine(th, r)
        if refine_band:
            line = refine_line(pts, line, grid.origin, refine_band)
        if exclusive:
            # side lobes of a stronger line vote mostly with pixels it already owns
            near = np.abs(rel @ line.normal - line.r) <= claim_tol
            if np.count_nonzero(near & ~claimed) < threshold:
                continue
            claimed |= near
        out.append(HoughLine(line, vt, _segment(all_points, line, grid.origin, support_tol)))
    return out


DEFAULT_SCHEDULE: tuple[tuple[int, float], ...] = ((0, 1.0), (10_000, 0.5), (20_000, 0.25))


def sample_fraction(n_edges: int, schedule: Sequence[tuple[int, float]]) -> float:
    """Fraction of the last schedule entry whose edge-count threshold is reached."""
    frac = 1.0
    for min_edges, f in sorted(schedule):
        if not 0 < f <= 1:
            raise ValueError("sampling fractions must lie in (0, 1]")
        if n_edges >= min_edges:
            frac = f
    return frac


def p_hough_lines(
    edges: np.ndarray,
    schedule: Sequence[tuple[int, float]] = DEFAULT_SCHEDULE,
    seed: int = 0,
    threshold: int = 40,
    **kwargs,
) -> list[HoughLine]:
    """Hough voting over a seeded random subset of the edge pixels.

    The subset size follows ``schedule`` (pairs ``(min_edges, fraction)``)
    and the vote threshold is scaled by the same fraction.
    """
    pts = edge_points(np.asarray(edges))
    frac = sample_fraction(len(pts), schedule)
    if frac < 1.0:
        k = max(1, int(round(frac * len(pts))))
        idx = np.sort(np.random.default_rng(seed).choice(len(pts), size=k, replace=False))
        pts = pts[idx]
    return hough_lines(edges, threshold=max(1, int(round(threshold * frac))), points=pts, **kwargs)
