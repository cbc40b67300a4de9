"""Synthetic scenes of power lines and masts, rendered by per-pixel ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, Pose, PowerLine3D
from ..obstacles import EllipsoidObstacle

NEAR_PLANE = 0.05


@dataclass(frozen=True)
class SceneLine:
    line: PowerLine3D
    thickness: float = 0.05
    intensity: float = 1.0

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError("line thickness must be positive")


@dataclass(frozen=True)
class SceneModel:
    """Lines and mast proxies in the world frame plus image formation settings."""

    lines: tuple[SceneLine, ...] = ()
    masts: tuple[EllipsoidObstacle, ...] = ()
    background: float = 0.2
    mast_intensity: float = 0.55
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "masts", tuple(self.masts))
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass(frozen=True)
class RasterImage:
    """Row-major intensity grid in [0, 1] with an optional depth channel.

    Depth is the camera-frame z of the nearest surface, NaN where the ray
    hits nothing.
    """

    intensity: np.ndarray
    depth: np.ndarray | None = None

    def __post_init__(self):
        I = np.asarray(self.intensity, dtype=float)
        if I.ndim != 2:
            raise ValueError("intensity must be a 2-D grid")
        if not np.all(np.isfinite(I)):
            raise ValueError("intensities must be finite")
        object.__setattr__(self, "intensity", I)
        if self.depth is not None:
            D = np.asarray(self.depth, dtype=float)
            if D.shape != I.shape:
                raise ValueError("depth channel must match the intensity grid")
            object.__setattr__(self, "depth", D)

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]


def camera_frame(body: Pose, extrinsics: Pose) -> tuple[np.ndarray, np.ndarray]:
    """World position of the camera centre and ``R_WC``."""
    cam = body * extrinsics
    return cam.translation, cam.rotation.to_matrix()


def pixel_rays(K: CameraIntrinsics, R_WC: np.ndarray) -> np.ndarray:
    """World ray directions scaled to unit camera depth, shape (H, W, 3)."""
    u = np.arange(K.width, dtype=float)
    v = np.arange(K.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d_C = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1)
    return d_C @ R_WC.T


def _line_coverage(o, D, sl: SceneLine, f: float):
    """Anti-aliased coverage and depth of a thick segment along every ray."""
    a = sl.line.p_WL1
    seg = sl.line.p_WL2 - a
    L = np.linalg.norm(seg)
    e = seg / L
    w0 = o - a
    A = np.einsum("...i,...i->...", D, D)
    B = D @ e
    Dd = D @ w0
    E = float(e @ w0)
    denom = A - B * B
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-12, (A * E - B * Dd) / denom, 0.0)
    s = np.clip(s, 0.0, L)
    closest = a + s[..., None] * e
    Z = np.einsum("...i,...i->...", closest - o, D) / A
    gap = o + Z[..., None] * D - closest
    dist = np.linalg.norm(gap, axis=-1)
    Zs = np.where(Z > NEAR_PLANE, Z, np.inf)
    radius_px = 0.5 * sl.thickness * f / Zs
    cov = np.clip(radius_px + 0.5 - dist * f / Zs, 0.0, 1.0)
    cov = np.where(Z > NEAR_PLANE, cov, 0.0)
    return cov, Z


def _box_hit(o, D, mast: EllipsoidObstacle):
    """Entry depth of the mast's bounding box along each ray (inf on miss)."""
    R = mast.rotation
    half = np.array([mast.semi_axes[0], mast.semi_axes[1], 0.5 * mast.render_height])
    oo = R @ (o - mast.center)
    DD = D @ R.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - oo) / DD
        t2 = (half - oo) / DD
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmin <= tmax) & (tmin > NEAR_PLANE)
    return np.where(hit, tmin, np.inf)


def _cast(scene: SceneModel, o: np.ndarray, D: np.ndarray, f: float):
    """Intensity and depth along rays ``o + Z * D`` (any leading shape)."""
    shape = D.shape[:-1]
    I = np.full(shape, float(scene.background))
    depth = np.full(shape, np.inf)
    for mast in scene.masts:
        Z = _box_hit(o, D, mast)
        front = Z < depth
        I[front] = scene.mast_intensity
        depth[front] = Z[front]
    # far to near so nearer lines are composited on top
    order = sorted(scene.lines, key=lambda sl: -sl.line.distance_to(o))
    for sl in order:
        cov, Z = _line_coverage(o, D, sl, f)
        vis = (cov > 0) & (Z < depth)
        I[vis] = I[vis] * (1.0 - cov[vis]) + sl.intensity * cov[vis]
        solid = vis & (cov >= 0.5)
        depth[solid] = Z[solid]
    depth[~np.isfinite(depth)] = np.nan
    return I, depth


def render(
    scene: SceneModel,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    rng: np.random.Generator | int | None = None,
) -> RasterImage:
    """Render intensity and depth seen from the camera at ``body * extrinsics``.

    Masts are drawn as opaque boxes (semi-axes ``a, b`` and the render
    height); lines as thick segments whose pixel width follows perspective.
    Gaussian noise with ``scene.noise_sigma`` is added last, then clipped.
    """
    o, R_WC = camera_frame(body, extrinsics)
    I, depth = _cast(scene, o, pixel_rays(K, R_WC), 0.5 * (K.fx + K.fy))
    if scene.noise_sigma > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        I = I + gen.normal(0.0, scene.noise_sigma, size=I.shape)
    return RasterImage(np.clip(I, 0.0, 1.0), depth)


def render_depth_windows(
    scene: SceneModel,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    centers,
    half: int = 2,
) -> np.ndarray:
    """Full-size depth raster that is only ray-cast in small windows.

    Pixels outside the ``(2 half + 1)``-square windows around ``centers``
    are NaN.  Inside the windows the values equal those of :func:`render`.
    """
    depth = np.full((K.height, K.width), np.nan)
    mask = np.zeros(depth.shape, dtype=bool)
    for u, v in np.asarray(centers, dtype=float).reshape(-1, 2):
        j, i = int(round(u)), int(round(v))
        mask[max(0, i - half) : i + half + 1, max(0, j - half) : j + half + 1] = True
    vv, uu = np.nonzero(mask)
    if vv.size == 0:
        return depth
    o, R_WC = camera_frame(body, extrinsics)
    d_C = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones(uu.size)], axis=-1)
    _, z = _cast(scene, o, d_C @ R_WC.T, 0.5 * (K.fx + K.fy))
    depth[vv, uu] = z
    return depth


def project_segment(
    line: PowerLine3D,
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    near: float = NEAR_PLANE,
) -> np.ndarray | None:
    """Raster endpoints ``[[u1, v1], [u2, v2]]`` of the visible part of ``line``.

    The segment is clipped to the near plane and then to the image
    rectangle ``[0, W-1] x [0, H-1]``; ``None`` when nothing is visible.
    """
    cam = (body * extrinsics).inverse()
    a = cam.apply(line.p_WL1)
    b = cam.apply(line.p_WL2)
    if a[2] <= near and b[2] <= near:
        return None
    if a[2] <= near or b[2] <= near:
        t = (near - a[2]) / (b[2] - a[2])
        c = a + t * (b - a)
        a, b = (c, b) if a[2] <= near else (a, c)
    p = np.array([[K.fx * a[0] / a[2] + K.cx, K.fy * a[1] / a[2] + K.cy],
                  [K.fx * b[0] / b[2] + K.cx, K.fy * b[1] / b[2] + K.cy]])  # fmt: skip
    return clip_segment(p, K.width, K.height)


def clip_segment(p: np.ndarray, width: int, height: int) -> np.ndarray | None:
    """Liang-Barsky clipping of a 2-D segment to ``[0, W-1] x [0, H-1]``."""
    (x0, y0), (x1, y1) = p
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, x0), (dx, width - 1 - x0), (-dy, y0), (dy, height - 1 - y0)):
        if pk == 0.0:
            if qk < 0:
                return None
            continue
        t = qk / pk
        if pk < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return np.array([[x0 + t0 * dx, y0 + t0 * dy], [x0 + t1 * dx, y0 + t1 * dy]])
