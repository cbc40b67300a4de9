"""Line detections as oriented boxes: an oracle detector and endpoint back-projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, GeometryError, Pose, PolarImageLine, PowerLine3D, cartesian_to_polar
from .scene import RasterImage, SceneModel, project_segment

CONFIDENCE_GATE = 0.8


class BackprojectionError(GeometryError):
    """No valid depth around a detection endpoint."""


@dataclass(frozen=True)
class Detection:
    """Axis-aligned box around a line with its inclination sign.

    ``inclination = +1`` means the line runs from the top-left to the
    bottom-right corner (raster coordinates, v pointing down).
    """

    center: tuple[float, float]
    width: float
    height: float
    inclination: int
    confidence: float
    label: int = -1  # scene line index, oracle only; never used for matching

    def __post_init__(self):
        if self.inclination not in (1, -1):
            raise ValueError("inclination must be +1 or -1")
        if self.width < 0 or self.height < 0:
            raise ValueError("box dimensions must be non-negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @classmethod
    def from_endpoints(cls, p1, p2, confidence: float, inclination: int | None = None, label: int = -1):
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        lo, hi = np.minimum(p1, p2), np.maximum(p1, p2)
        if inclination is None:
            d = p2 - p1
            inclination = -1 if d[0] * d[1] < 0 else 1
        c = 0.5 * (lo + hi)
        return cls((c[0], c[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]), inclination, confidence, label)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def endpoints(self) -> np.ndarray:
        """Corner pair selected by the inclination sign, shape (2, 2)."""
        u, v = self.center
        hw, hh = 0.5 * self.width, 0.5 * self.height
        if self.inclination > 0:
            return np.array([[u - hw, v - hh], [u + hw, v + hh]])
        return np.array([[u + hw, v - hh], [u - hw, v + hh]])

    def polar(self, K: CameraIntrinsics) -> PolarImageLine:
        (u1, v1), (u2, v2) = self.endpoints
        return cartesian_to_polar(u1 - K.cx, v1 - K.cy, u2 - K.cx, v2 - K.cy)

    def to_record(self) -> dict:
        return {
            "center": list(self.center),
            "width": self.width,
            "height": self.height,
            "inclination": self.inclination,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class OracleConfig:
    """Noise and confidence model of the oracle detector.

    Confidence is ``c_max * min(1, visible_length / reference_length)``
    where the reference length defaults to half the image diagonal.
    """

    sigma_px: float = 2.0
    c_max: float = 0.95
    reference_length: float | None = None
    gate: float = CONFIDENCE_GATE

    def __post_init__(self):
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be non-negative")


def oracle_detect(
    scene: SceneModel,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    config: OracleConfig = OracleConfig(),
    rng: np.random.Generator | int | None = None,
) -> list[Detection]:
    """Detections of every visible scene line, emulating a learned detector.

    Visible segments are clipped to the image, endpoints perturbed by
    Gaussian noise and the box rebuilt from them (clamped to the image).
    Detections at or below the confidence gate are withheld.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    ref_len = config.reference_length or 0.5 * math.hypot(K.width, K.height)
    out = []
    for idx, sl in enumerate(scene.lines):
        seg = project_segment(sl.line, body, extrinsics, K)
        # noise is drawn for every line so the stream stays aligned across frames
        noise = gen.normal(0.0, config.sigma_px, size=(2, 2)) if config.sigma_px > 0 else np.zeros((2, 2))
        if seg is None:
            continue
        d = seg[1] - seg[0]
        length = float(np.hypot(*d))
        if length <= 0:
            continue
        conf = config.c_max * min(1.0, length / ref_len)
        if conf <= config.gate:
            continue
        incl = -1 if d[0] * d[1] < 0 else 1
        p = seg + noise
        p[:, 0] = np.clip(p[:, 0], 0.0, K.width - 1)
        p[:, 1] = np.clip(p[:, 1], 0.0, K.height - 1)
        out.append(Detection.from_endpoints(p[0], p[1], conf, inclination=incl, label=idx))
    return out


def _window_depth(depth: np.ndarray, u: float, v: float, half: int) -> float:
    h, w = depth.shape
    j, i = int(round(u)), int(round(v))
    win = depth[max(0, i - half) : min(h, i + half + 1), max(0, j - half) : min(w, j + half + 1)]
    valid = win[np.isfinite(win) & (win > 0)]
    if valid.size == 0:
        raise BackprojectionError(f"no valid depth near pixel ({u:.1f}, {v:.1f})")
    return float(np.median(valid))


def backproject(
    det: Detection,
    depth: RasterImage | np.ndarray,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    window: int = 5,
) -> PowerLine3D:
    """World-frame line through the detection endpoints.

    Each endpoint is unprojected at the median valid depth of a ``window``
    x ``window`` neighbourhood (clipped at the image border).
    """
    D = depth.depth if isinstance(depth, RasterImage) else np.asarray(depth, dtype=float)
    if D is None:
        raise BackprojectionError("raster has no depth channel")
    cam = body * extrinsics
    pts = []
    for u, v in det.endpoints:
        z = _window_depth(D, u, v, window // 2)
        p_C = np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])
        pts.append(cam.apply(p_C))
    if np.linalg.norm(pts[1] - pts[0]) < 1e-9:
        raise BackprojectionError("back-projected endpoints coincide")
    return PowerLine3D(pts[0], pts[1])
