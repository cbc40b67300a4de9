"""U-/V-disparity obstacle extraction from depth rasters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, Pose
from .obstacles import EllipsoidObstacle


@dataclass(frozen=True)
class DisparityImage:
    """Disparity in pixels; NaN marks invalid pixels."""

    disparity: np.ndarray
    baseline: float
    fx: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.disparity)

    @property
    def height(self) -> int:
        return self.disparity.shape[0]

    @property
    def width(self) -> int:
        return self.disparity.shape[1]


@dataclass(frozen=True)
class UVMaps:
    """``u_map[u, b]`` and ``v_map[v, b]`` pixel counts per disparity bin."""

    u_map: np.ndarray
    v_map: np.ndarray
    bin_width: float

    @property
    def bins(self) -> int:
        return self.u_map.shape[1]

    def bin_of(self, disparity: np.ndarray) -> np.ndarray:
        b = np.floor(np.asarray(disparity) / self.bin_width).astype(np.int64)
        return np.clip(b, 0, self.bins - 1)


def disparity_from_depth(depth, baseline: float, fx: float) -> DisparityImage:
    """``d = baseline * fx / Z``; missing or non-positive depth is invalid."""
    if not (baseline > 0 and fx > 0):
        raise ValueError("baseline and fx must be positive")
    Z = np.asarray(getattr(depth, "depth", depth), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(np.isfinite(Z) & (Z > 0), baseline * fx / Z, np.nan)
    d[np.isposinf(Z)] = 0.0
    return DisparityImage(d, float(baseline), float(fx))


def build_uv_maps(disp: DisparityImage, bins: int = 64, bin_width: float = 1.0) -> UVMaps:
    """Column and row histograms of disparity; larger values fall in the last bin."""
    if bins < 2:
        raise ValueError("need at least 2 disparity bins")
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    h, w = disp.disparity.shape
    valid = disp.valid
    b = np.clip(np.floor(np.where(valid, disp.disparity, 0.0) / bin_width).astype(np.int64), 0, bins - 1)
    vv, uu = np.nonzero(valid)
    bb = b[valid]
    u_map = np.bincount(uu * bins + bb, minlength=w * bins).reshape(w, bins)
    v_map = np.bincount(vv * bins + bb, minlength=h * bins).reshape(h, bins)
    return UVMaps(u_map, v_map, float(bin_width))


@dataclass(frozen=True)
class ExtractionConfig:
    min_mass: int = 30
    cell_threshold: int = 3  # minimum U-map count for a cell to join a blob
    merge_gap: float = 0.5
    min_disparity: float = 1.0  # ignore the far field below this disparity


def _box_gap(a_lo, a_hi, b_lo, b_hi) -> float:
    sep = np.maximum(0.0, np.maximum(a_lo - b_hi, b_lo - a_hi))
    return float(np.linalg.norm(sep))


def extract_obstacles(
    maps: UVMaps,
    disp: DisparityImage,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    config: ExtractionConfig = ExtractionConfig(),
) -> list[EllipsoidObstacle]:
    """Axis-aligned ellipsoids for blobs of the U-map confirmed in the V-map.

    Blobs are 4-connected components of U-map cells with at least
    ``cell_threshold`` counts.  For each blob the V-map restricted to its
    columns and disparity band gives the row extent.  The metric box is
    unprojected at the blob's median depth, centred half a width behind the
    visible face; covariance per axis is the depth step of one disparity bin.
    Boxes closer than ``merge_gap`` are merged.
    """
    if config.min_mass <= 0 or config.merge_gap < 0:
        raise ValueError("thresholds must be positive")
    lo_bin = int(np.floor(config.min_disparity / maps.bin_width))
    mask = maps.u_map >= config.cell_threshold
    mask[:, :lo_bin] = False
    labels, n = ndimage.label(mask)
    cam = body * extrinsics
    R_WC = cam.rotation.to_matrix()
    valid = disp.valid
    bins = maps.bin_of(np.where(valid, disp.disparity, 0.0))
    boxes = []
    for k in range(1, n + 1):
        cells = labels == k
        mass = int(maps.u_map[cells].sum())
        if mass < config.min_mass:
            continue
        us, bs = np.nonzero(cells)
        u0, u1, b0, b1 = us.min(), us.max(), bs.min(), bs.max()
        pix = valid & (bins >= b0) & (bins <= b1)
        pix[:, : u0] = False
        pix[:, u1 + 1 :] = False
        rows = np.nonzero(pix.sum(axis=1) > 0)[0]
        if rows.size == 0:
            continue
        v0, v1 = rows.min(), rows.max()
        d_med = float(np.median(disp.disparity[pix]))
        if d_med <= 0:
            continue
        Z = disp.baseline * disp.fx / d_med
        half_w = 0.5 * (u1 - u0 + 1) * Z / K.fx
        half_h = 0.5 * (v1 - v0 + 1) * Z / K.fy
        uc, vc = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        center_C = np.array([(uc - K.cx) * Z / K.fx, (vc - K.cy) * Z / K.fy, Z + half_w])
        half_C = np.array([half_w, half_h, half_w])
        center_W = cam.apply(center_C)
        half_W = np.abs(R_WC) @ half_C
        dz = Z * Z * maps.bin_width / (disp.baseline * disp.fx)
        boxes.append([center_W - half_W, center_W + half_W, dz])

    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _box_gap(boxes[i][0], boxes[i][1], boxes[j][0], boxes[j][1]) < config.merge_gap:
                    a, b = boxes[i], boxes.pop(j)
                    boxes[i] = [np.minimum(a[0], b[0]), np.maximum(a[1], b[1]), max(a[2], b[2])]
                    merged = True
                    break
            if merged:
                break

    out = []
    for lo, hi, dz in boxes:
        half = 0.5 * (hi - lo)
        out.append(EllipsoidObstacle(0.5 * (lo + hi), np.maximum(half, 1e-3), covariance=np.full(3, dz * dz)))
    return out
