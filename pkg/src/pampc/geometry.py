"""Rigid-body and camera geometry.

Quaternions are stored scalar-first ``(w, x, y, z)`` and ``R(q)`` maps
vectors from the child frame into the parent frame, so ``q_WB`` rotates
body-frame vectors into the world frame.

Image conventions: raster pixels have their origin at the top-left corner
with ``u`` to the right and ``v`` downwards.  Polar line parameters are
always expressed relative to the principal point, i.e. on ``(u - cx, v - cy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEPTH_EPS = 1e-6


class GeometryError(ValueError):
    """Invalid geometric input (non-finite values, degenerate lines, ...)."""


class BehindCameraError(GeometryError):
    """A point does not lie in front of the camera."""


class VisibilityError(GeometryError):
    """The tracked line cannot be observed from the given pose."""


def _vec3(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise GeometryError(f"{name} must have 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} must be finite")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# batched quaternion helpers (arrays of shape (..., 4))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b`` over the trailing axis."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (possibly batched) unit quaternions."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    R = np.empty(np.shape(w) + (3, 3))
    R[..., 0, 0] = w * w + x * x - y * y - z * z
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = w * w - x * x + y * y - z * z
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = w * w - x * x - y * y + z * z
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) for a single rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def rotate_conj_jacobian(q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """d(R(q)^T w)/dq for batched q (..., 4) and w (..., 3); shape (..., 3, 4)."""
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    q0 = q[..., 0]
    qv = q[..., 1:]
    out = np.empty(np.broadcast_shapes(q.shape[:-1], w.shape[:-1]) + (3, 4))
    w0, w1, w2 = w[..., 0], w[..., 1], w[..., 2]
    x, y, z = qv[..., 0], qv[..., 1], qv[..., 2]
    # first column: 2 q0 w - 2 qv x w
    out[..., 0, 0] = 2.0 * (q0 * w0 - (y * w2 - z * w1))
    out[..., 1, 0] = 2.0 * (q0 * w1 - (z * w0 - x * w2))
    out[..., 2, 0] = 2.0 * (q0 * w2 - (x * w1 - y * w0))
    # remaining block: 2 (qv w^T - w qv^T + (qv.w) I + q0 [w]x)
    dot = x * w0 + y * w1 + z * w2
    qs = (x, y, z)
    ws = (w0, w1, w2)
    for i in range(3):
        for j in range(3):
            out[..., i, 1 + j] = 2.0 * (qs[i] * ws[j] - ws[i] * qs[j])
        out[..., i, 1 + i] += 2.0 * dot
    out[..., 0, 2] -= 2.0 * q0 * w2
    out[..., 0, 3] += 2.0 * q0 * w1
    out[..., 1, 1] += 2.0 * q0 * w2
    out[..., 1, 3] -= 2.0 * q0 * w0
    out[..., 2, 1] -= 2.0 * q0 * w1
    out[..., 2, 2] += 2.0 * q0 * w0
    return out


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation as a unit quaternion; renormalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        vals = (self.w, self.x, self.y, self.z)
        if not all(math.isfinite(float(c)) for c in vals):
            raise GeometryError("quaternion components must be finite")
        n = math.sqrt(sum(float(c) * float(c) for c in vals))
        if n < 1e-12:
            raise GeometryError("quaternion has zero norm")
        for name, c in zip("wxyz", vals):
            object.__setattr__(self, name, float(c) / n)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        w, x, y, z = np.asarray(q, dtype=float).reshape(4)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = _vec3(axis, "axis")
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise GeometryError("rotation axis has zero length")
        s = math.sin(angle / 2.0) / n
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_yaw(cls, yaw: float) -> "UnitQuaternion":
        return cls(math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0))

    @classmethod
    def from_matrix(cls, R) -> "UnitQuaternion":
        return cls.from_array(rotmat_to_quat(R))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def to_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.as_array())

    def rotate(self, v) -> np.ndarray:
        return rotate_vector(self, v)


def rotate_vector(q: UnitQuaternion, v) -> np.ndarray:
    """Quaternion-vector product ``q ⊙ v`` = ``R(q) v``."""
    v = _vec3(v)
    qv = np.array([q.x, q.y, q.z])
    t = 2.0 * np.cross(qv, v)
    return v + q.w * t + np.cross(qv, t)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping child-frame points into the parent frame."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    def __post_init__(self):
        object.__setattr__(self, "translation", _frozen(_vec3(self.translation, "translation")))
        if not isinstance(self.rotation, UnitQuaternion):
            object.__setattr__(self, "rotation", UnitQuaternion.from_array(self.rotation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def apply(self, p) -> np.ndarray:
        return rotate_vector(self.rotation, p) + self.translation

    def inverse(self) -> "Pose":
        qi = self.rotation.conjugate()
        return Pose(-rotate_vector(qi, self.translation), qi)

    def __mul__(self, other: "Pose") -> "Pose":
        return Pose(self.apply(other.translation), self.rotation * other.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.to_matrix()
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PowerLine3D:
    p_WL1: np.ndarray
    p_WL2: np.ndarray

    def __post_init__(self):
        a = _vec3(self.p_WL1, "p_WL1")
        b = _vec3(self.p_WL2, "p_WL2")
        if np.linalg.norm(b - a) <= 1e-6:
            raise GeometryError("line endpoints must be distinct")
        object.__setattr__(self, "p_WL1", _frozen(a))
        object.__setattr__(self, "p_WL2", _frozen(b))

    @property
    def direction(self) -> np.ndarray:
        d = self.p_WL2 - self.p_WL1
        return d / np.linalg.norm(d)

    def distance_to(self, p) -> float:
        """Perpendicular distance from ``p`` to the infinite line."""
        w = _vec3(p) - self.p_WL1
        return float(np.linalg.norm(np.cross(w, self.direction)))


@dataclass(frozen=True)
class PolarImageLine:
    """Image line ``u cos(theta) + v sin(theta) = r`` (principal-point origin)."""

    theta: float
    r: float

    def __post_init__(self):
        th, r = float(self.theta), float(self.r)
        if not (math.isfinite(th) and math.isfinite(r)):
            raise GeometryError("polar line parameters must be finite")
        # fold into (-pi/2, pi/2]
        th = math.remainder(th, 2.0 * math.pi)
        if th > math.pi / 2:
            th, r = th - math.pi, -r
        elif th <= -math.pi / 2:
            th, r = th + math.pi, -r
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "r", r)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def point(self, t: float) -> np.ndarray:
        """Point at signed arc length ``t`` from the foot of the normal."""
        n = self.normal
        return self.r * n + t * np.array([-n[1], n[0]])


@dataclass(frozen=True)
class PerceptionVector:
    theta: float
    r: float
    d: float
    d_s: float

    @property
    def z(self) -> np.ndarray:
        return np.array([self.theta, self.r, self.d])

    @property
    def z_s(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.d_s])

    @property
    def residual(self) -> np.ndarray:
        return self.z - self.z_s


# ---------------------------------------------------------------------------
# operations


def world_to_camera(p_WL, body: Pose, extrinsics: Pose) -> np.ndarray:
    """``p_CL = (q_WB q_BC)^-1 ⊙ (p_WL - (q_WB ⊙ p_BC + p_WB))``."""
    p_WL = _vec3(p_WL, "p_WL")
    q_WC = body.rotation * extrinsics.rotation
    p_WC = rotate_vector(body.rotation, extrinsics.translation) + body.translation
    return rotate_vector(q_WC.conjugate(), p_WL - p_WC)


def camera_to_world(p_C, body: Pose, extrinsics: Pose) -> np.ndarray:
    return body.apply(extrinsics.apply(_vec3(p_C, "p_C")))


def project(p_C, K: CameraIntrinsics) -> tuple[float, float]:
    X, Y, Z = _vec3(p_C, "p_C")
    if Z <= DEPTH_EPS:
        raise BehindCameraError(f"point depth {Z:.3g} m is not in front of the camera")
    return K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy


def unproject(u: float, v: float, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point at pixel ``(u, v)`` with depth (z) ``depth``."""
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])


def cartesian_to_polar(u1: float, v1: float, u2: float, v2: float) -> PolarImageLine:
    du, dv = u2 - u1, v2 - v1
    if math.hypot(du, dv) <= 1e-12:
        raise GeometryError("degenerate line: coincident endpoints")
    theta = math.atan(-du / dv) if dv != 0.0 else math.pi / 2
    return PolarImageLine(theta, u1 * math.cos(theta) + v1 * math.sin(theta))


def perception_vector(
    body: Pose,
    extrinsics: Pose,
    K: CameraIntrinsics,
    line: PowerLine3D,
    d_s: float,
    distance_from: str = "body",
) -> PerceptionVector:
    """Observed ``(theta, r, d)`` of ``line`` with setpoint distance ``d_s``.

    ``residual`` of the returned value is the perception error used by the
    controller.  ``distance_from`` selects whether ``d`` is measured from the
    body origin (default) or the camera centre.
    """
    uv = []
    for p in (line.p_WL1, line.p_WL2):
        try:
            u, v = project(world_to_camera(p, body, extrinsics), K)
        except BehindCameraError as exc:
            raise VisibilityError("line endpoint behind the camera") from exc
        uv += [u - K.cx, v - K.cy]
    polar = cartesian_to_polar(*uv)
    if distance_from == "body":
        origin = body.translation
    elif distance_from == "camera":
        origin = body.apply(extrinsics.translation)
    else:
        raise ValueError(f"unknown distance origin {distance_from!r}")
    return PerceptionVector(polar.theta, polar.r, line.distance_to(origin), float(d_s))


def angular_distance(theta_a: float, theta_b: float) -> float:
    """Angle between two undirected lines, in [0, pi/2]."""
    d = abs(theta_a - theta_b) % math.pi
    return min(d, math.pi - d)


def similarity_score(detected, reference, w: float, l: float) -> float:
    """Visibility similarity between two image lines.

    ``detected`` and ``reference`` are ``(PolarImageLine, center)`` pairs with
    the center point in pixels.  Returns ``((1 - 2θ/π)(1 - h/diag))²``.
    """
    (line_a, ca), (line_b, cb) = detected, reference
    theta = angular_distance(line_a.theta, line_b.theta)
    h = float(np.linalg.norm(np.asarray(ca, dtype=float) - np.asarray(cb, dtype=float)))
    s_theta = 1.0 - 2.0 * theta / math.pi
    s_d = max(0.0, 1.0 - h / math.hypot(w, l))
    return (s_theta * s_d) ** 2


# ---------------------------------------------------------------------------
# batched perception residual with analytic Jacobian (used by the solver)


def line_anchor_points(line: PowerLine3D, origins: np.ndarray, half_span: float = 0.5):
    """Two points on the infinite line near each origin (batched, (n, 3)).

    The projected image line does not depend on which two points of the 3-D
    line are used, so re-anchoring keeps them in front of nearby cameras.
    """
    e = line.direction
    s = (np.asarray(origins) - line.p_WL1) @ e
    foot = line.p_WL1 + s[:, None] * e
    return foot - half_span * e, foot + half_span * e


def perception_residual_batch(
    p_WB: np.ndarray,
    q_WB: np.ndarray,
    extrinsics: Pose,
    K: CameraIntrinsics,
    line: PowerLine3D,
    d_s: float,
    distance_from: str = "body",
    min_depth: float = 0.1,
):
    """Perception residual and its Jacobian w.r.t. ``(p_WB, q_WB)``.

    Returns ``(zbar, J, visible)`` with shapes ``(n, 3)``, ``(n, 3, 7)`` and
    ``(n,)``.  Stages whose anchor points are behind the camera are marked
    invisible and carry zero residual and Jacobian.
    """
    p = np.atleast_2d(np.asarray(p_WB, dtype=float))
    q = np.atleast_2d(np.asarray(q_WB, dtype=float))
    n = p.shape[0]
    R_BC = extrinsics.rotation.to_matrix()
    p_BC = extrinsics.translation
    R_WB = quat_to_rotmat(q)
    cam = p + R_WB @ p_BC
    pa, pb = line_anchor_points(line, cam)

    uvs, duv = [], []
    depths = []
    for P in (pa, pb):
        w = P - p
        g = (w[:, None, :] @ R_WB)[:, 0]  # R^T w
        pc = (g - p_BC) @ R_BC  # R_BC^T (g - p_BC)
        dpc = np.empty((n, 3, 7))
        dpc[:, :, :3] = -(R_BC.T @ R_WB.transpose(0, 2, 1))
        dpc[:, :, 3:] = R_BC.T @ rotate_conj_jacobian(q, w)
        X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
        depths.append(Z)
        Zs = np.where(Z > min_depth, Z, 1.0)
        u = K.fx * X / Zs
        v = K.fy * Y / Zs
        dproj = np.zeros((n, 2, 3))
        dproj[:, 0, 0] = K.fx / Zs
        dproj[:, 0, 2] = -K.fx * X / Zs**2
        dproj[:, 1, 1] = K.fy / Zs
        dproj[:, 1, 2] = -K.fy * Y / Zs**2
        uvs.append((u, v))
        duv.append(dproj @ dpc)
    visible = (depths[0] > min_depth) & (depths[1] > min_depth)

    (u1, v1), (u2, v2) = uvs
    du, dv = u2 - u1, v2 - v1
    den = du**2 + dv**2
    den = np.where(den > 1e-18, den, 1.0)
    dv_safe = np.where(np.abs(dv) > 0, dv, 1.0)
    theta = np.where(np.abs(dv) > 0, np.arctan(-du / dv_safe), np.pi / 2)
    c, s = np.cos(theta), np.sin(theta)
    r = u1 * c + v1 * s
    d_du = duv[1][:, 0] - duv[0][:, 0]
    d_dv = duv[1][:, 1] - duv[0][:, 1]
    dtheta = (du[:, None] * d_dv - dv[:, None] * d_du) / den[:, None]
    dr = c[:, None] * duv[0][:, 0] + s[:, None] * duv[0][:, 1] + (-u1 * s + v1 * c)[:, None] * dtheta

    origin = cam if distance_from == "camera" else p
    e = line.direction
    w0 = origin - line.p_WL1
    perp = w0 - (w0 @ e)[:, None] * e
    d = np.linalg.norm(perp, axis=1)
    dd = np.zeros((n, 7))
    safe = d > 1e-9
    dd[safe, :3] = perp[safe] / d[safe, None]
    if distance_from == "camera":
        # d(cam)/dq = d(R_WB p_BC)/dq
        dcam_dq = _rotate_jacobian(q, p_BC)
        dd[safe, 3:] = np.einsum("ni,nik->nk", perp[safe] / d[safe, None], dcam_dq[safe])

    zbar = np.stack([theta, r, d - d_s], axis=1)
    J = np.stack([dtheta, dr, dd], axis=1)
    zbar[~visible] = 0.0
    J[~visible] = 0.0
    return zbar, J, visible


def _rotate_jacobian(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(R(q) v)/dq for batched q and a fixed vector v; shape (n, 3, 4)."""
    qc = q * np.array([1.0, -1.0, -1.0, -1.0])
    # R(q) v = R(qc)^T v, and d(qc)/dq = diag(1, -1, -1, -1)
    vv = np.broadcast_to(v, q.shape[:-1] + (3,))
    return rotate_conj_jacobian(qc, vv) * np.array([1.0, -1.0, -1.0, -1.0])
