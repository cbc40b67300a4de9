"""Quadrotor rigid-body model, rotor mixing and RK4 discretization.

Two models share the same conventions:

* :class:`FullModel` -- state ``[p, q, v, omega]`` (13), input the four rotor
  thrusts.  Used as the simulation plant.
* :class:`ReducedModel` -- state ``[p, q, v]`` (10), input ``[c, omega_cmd]``
  with body rates commanded directly.  Used as the MPC prediction model.

All model functions accept a leading batch axis.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import UnitQuaternion, quat_to_rotmat


def _default_offsets() -> np.ndarray:
    return np.full(4, 0.15 / math.sqrt(2.0))


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters and input bounds (SI units)."""

    mass: float = 0.75
    inertia: np.ndarray = field(default_factory=lambda: np.array([0.0025, 0.0021, 0.0043]))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    d_x: np.ndarray = field(default_factory=_default_offsets)
    d_y: np.ndarray = field(default_factory=_default_offsets)
    c_tau: float = 0.022
    c_min: float = 0.5
    c_max: float = 25.0
    omega_max: float = 6.0

    def __post_init__(self):
        for name, shape in (("inertia", (3,)), ("gravity", (3,)), ("d_x", (4,)), ("d_y", (4,))):
            a = np.array(getattr(self, name), dtype=float).reshape(shape)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.all(self.inertia > 0):
            raise ValueError("inertia entries must be positive")
        if not self.c_min < self.c_max:
            raise ValueError("thrust bounds must satisfy c_min < c_max")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")

    @property
    def hover_thrust(self) -> float:
        return self.mass * float(np.linalg.norm(self.gravity))

    @property
    def rotor_max(self) -> float:
        return self.c_max / 4.0

    @property
    def u_min(self) -> np.ndarray:
        """Bounds of the reduced-model input ``[c, wx, wy, wz]``."""
        return np.array([self.c_min, -self.omega_max, -self.omega_max, -self.omega_max])

    @property
    def u_max(self) -> np.ndarray:
        return np.array([self.c_max, self.omega_max, self.omega_max, self.omega_max])

    def mixer(self) -> np.ndarray:
        """4x4 map from rotor thrusts to ``[c, tau_x, tau_y, tau_z]``."""
        return np.vstack([np.ones(4), torque_matrix(self)])

    @classmethod
    def from_mapping(cls, data) -> "QuadParams":
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in names:
                raise KeyError(f"unknown quadrotor parameter {key!r}")
            parts = [float(x) for x in str(value).replace(",", " ").split()]
            kwargs[key] = parts[0] if len(parts) == 1 else np.array(parts)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, section: str = "quad") -> "QuadParams":
        """Load from an INI-style key-value file (``[quad]`` section)."""
        cp = configparser.ConfigParser()
        if not cp.read(Path(path)):
            raise FileNotFoundError(path)
        return cls.from_mapping(dict(cp[section]) if cp.has_section(section) else {})

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ", ".join(repr(float(x)) for x in v) if isinstance(v, np.ndarray) else repr(float(v))
        return out


def torque_matrix(params: QuadParams) -> np.ndarray:
    """3x4 rotor-thrust to body-torque matrix, signs as in the rotor layout."""
    dx, dy, ct = params.d_x, params.d_y, params.c_tau
    return np.array(
        [
            [-dx[0], -dx[1], dx[2], dx[3]],
            [dy[0], -dy[1], -dy[2], dy[3]],
            [-ct, ct, -ct, ct],
        ]
    )


def thrust_torque_map(thrusts, params: QuadParams) -> tuple[float, np.ndarray]:
    """Collective thrust and body torque produced by four rotor thrusts."""
    c = np.asarray(thrusts, dtype=float).reshape(4)
    if not np.all(np.isfinite(c)):
        raise ValueError("rotor thrusts must be finite")
    if np.any(c < 0):
        raise ValueError("rotor thrusts must be non-negative")
    return float(c.sum()), torque_matrix(params) @ c


@dataclass
class QuadState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.q = UnitQuaternion.from_array(self.q).as_array()
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)

    def full(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.omega])

    def reduced(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v])

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        if x.shape == (13,):
            return cls(x[:3], x[3:7], x[7:10], x[10:13])
        if x.shape == (10,):
            return cls(x[:3], x[3:7], x[7:10])
        raise ValueError(f"state vector must have 10 or 13 entries, got {x.shape}")


# ---------------------------------------------------------------------------
# shared pieces


def _fill(shape, entries) -> np.ndarray:
    """Dense matrix batch from ``{(row, col): values}``; other entries zero."""
    out = np.zeros(shape)
    for (i, j), val in entries.items():
        out[..., i, j] = val
    return out


def _lambda(omega: np.ndarray) -> np.ndarray:
    """Matrix with ``q_dot = 0.5 * Lambda(omega) q`` (body rates)."""
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    return _fill(
        omega.shape[:-1] + (4, 4),
        {
            (0, 1): -wx, (0, 2): -wy, (0, 3): -wz,
            (1, 0): wx, (1, 2): wz, (1, 3): -wy,
            (2, 0): wy, (2, 1): -wz, (2, 3): wx,
            (3, 0): wz, (3, 1): wy, (3, 2): -wx,
        },
    )  # fmt: skip


def _xi(q: np.ndarray) -> np.ndarray:
    """Matrix with ``Lambda(omega) q = Xi(q) omega``."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return _fill(
        q.shape[:-1] + (4, 3),
        {
            (0, 0): -x, (0, 1): -y, (0, 2): -z,
            (1, 0): w, (1, 1): -z, (1, 2): y,
            (2, 0): z, (2, 1): w, (2, 2): -x,
            (3, 0): -y, (3, 1): x, (3, 2): w,
        },
    )  # fmt: skip


def _quat_rate(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """``0.5 * Lambda(omega) q`` without forming the matrix."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    out = np.empty(np.broadcast_shapes(q.shape, omega.shape[:-1] + (4,)))
    out[..., 0] = -wx * x - wy * y - wz * z
    out[..., 1] = wx * w + wz * y - wy * z
    out[..., 2] = wy * w - wz * x + wx * z
    out[..., 3] = wz * w + wy * x - wx * y
    return 0.5 * out


def _thrust_col(q: np.ndarray) -> np.ndarray:
    """Third column of R(q): the body z axis in the world frame."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    col = np.empty(q.shape[:-1] + (3,))
    col[..., 0] = 2 * (x * z + w * y)
    col[..., 1] = 2 * (y * z - w * x)
    col[..., 2] = w * w - x * x - y * y + z * z
    return col


def _thrust_axis(q: np.ndarray):
    """Third column of R(q) and its derivative w.r.t. q."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dcol = _fill(
        q.shape[:-1] + (3, 4),
        {
            (0, 0): 2 * y, (0, 1): 2 * z, (0, 2): 2 * w, (0, 3): 2 * x,
            (1, 0): -2 * x, (1, 1): -2 * w, (1, 2): 2 * z, (1, 3): 2 * y,
            (2, 0): 2 * w, (2, 1): -2 * x, (2, 2): -2 * y, (2, 3): 2 * z,
        },
    )  # fmt: skip
    return _thrust_col(q), dcol


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _skew(a: np.ndarray) -> np.ndarray:
    x, y, z = a[..., 0], a[..., 1], a[..., 2]
    return _fill(a.shape[:-1] + (3, 3), {(0, 1): -z, (0, 2): y, (1, 0): z, (1, 2): -x, (2, 0): -y, (2, 1): x})


class ReducedModel:
    """Body-rate-command model: ``x = [p, q, v]``, ``u = [c, omega_cmd]``."""

    nx = 10
    nu = 4
    quat = slice(3, 7)

    def __init__(self, params: QuadParams | None = None):
        self.params = params or QuadParams()

    @property
    def u_min(self) -> np.ndarray:
        return self.params.u_min

    @property
    def u_max(self) -> np.ndarray:
        return self.params.u_max

    def hover_input(self) -> np.ndarray:
        return np.array([self.params.hover_thrust, 0.0, 0.0, 0.0])

    def derivative(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        q, v = x[..., 3:7], x[..., 7:10]
        c, om = u[..., 0], u[..., 1:4]
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (10,)))
        out[..., 0:3] = v
        out[..., 3:7] = _quat_rate(q, om)
        out[..., 7:10] = _thrust_col(q) * (c / self.params.mass)[..., None] + self.params.gravity
        return out

    def derivative_jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        q = x[..., 3:7]
        c, om = u[..., 0], u[..., 1:4]
        m = self.params.mass
        col, dcol = _thrust_axis(q)
        fx = np.zeros(batch + (10, 10))
        fu = np.zeros(batch + (10, 4))
        fx[..., 0:3, 7:10] = np.eye(3)
        fx[..., 3:7, 3:7] = 0.5 * _lambda(om)
        fx[..., 7:10, 3:7] = dcol * (c / m)[..., None, None]
        fu[..., 3:7, 1:4] = 0.5 * _xi(q)
        fu[..., 7:10, 0] = col / m
        return self.derivative(x, u), fx, fu


class FullModel:
    """Rotor-thrust model: ``x = [p, q, v, omega]``, ``u = [c1, c2, c3, c4]``."""

    nx = 13
    nu = 4
    quat = slice(3, 7)

    def __init__(self, params: QuadParams | None = None):
        self.params = params or QuadParams()
        self._tau = torque_matrix(self.params)

    @property
    def u_min(self) -> np.ndarray:
        return np.zeros(4)

    @property
    def u_max(self) -> np.ndarray:
        return np.full(4, self.params.rotor_max)

    def hover_input(self) -> np.ndarray:
        return np.full(4, self.params.hover_thrust / 4.0)

    def derivative(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        q, v, om = x[..., 3:7], x[..., 7:10], x[..., 10:13]
        J = self.params.inertia
        c = u.sum(axis=-1)
        tau = u @ self._tau.T
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (13,)))
        out[..., 0:3] = v
        out[..., 3:7] = _quat_rate(q, om)
        out[..., 7:10] = _thrust_col(q) * (c / self.params.mass)[..., None] + self.params.gravity
        out[..., 10:13] = (tau - _cross(om, om * J)) / J
        return out

    def derivative_jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        q, om = x[..., 3:7], x[..., 10:13]
        J = self.params.inertia
        m = self.params.mass
        c = u.sum(axis=-1)
        col, dcol = _thrust_axis(q)
        fx = np.zeros(batch + (13, 13))
        fu = np.zeros(batch + (13, 4))
        fx[..., 0:3, 7:10] = np.eye(3)
        fx[..., 3:7, 3:7] = 0.5 * _lambda(om)
        fx[..., 3:7, 10:13] = 0.5 * _xi(q)
        fx[..., 7:10, 3:7] = dcol * (c / m)[..., None, None]
        # d(w x Jw)/dw = -[Jw]x + [w]x J
        dgyro = -_skew(om * J) + _skew(om) * J
        fx[..., 10:13, 10:13] = -dgyro / J[:, None]
        fu[..., 7:10, :] = (col / m)[..., None]
        fu[..., 10:13, :] = self._tau / J[:, None]
        return self.derivative(x, u), fx, fu


Model = ReducedModel | FullModel


def continuous_dynamics(model: Model, x, u) -> np.ndarray:
    """State derivative ``x_dot = f(x, u)``."""
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("state and input must be finite")
    return model.derivative(x, u)


def _normalize_quat(model: Model, x: np.ndarray) -> np.ndarray:
    x = x.copy()
    q = x[..., model.quat]
    x[..., model.quat] = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return x


def rk4_step(model: Model, x, u, dt: float) -> np.ndarray:
    """One classic RK4 step with zero-order-hold input, quaternion renormalized."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    f = model.derivative
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return _normalize_quat(model, x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def linearize(model: Model, x, u, dt: float):
    """Next state and Jacobians ``(A, B)`` of :func:`rk4_step` (batched).

    The chain rule runs through the four RK4 stages and the final quaternion
    renormalization, so the result is exact up to rounding.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    nx = model.nx
    jac = model.derivative_jacobians
    eye = np.eye(nx)
    h = 0.5 * dt

    k1, F1x, F1u = jac(x, u)
    k2, F2x, F2u = jac(x + h * k1, u)
    K1x, K1u = F1x, F1u
    K2x = F2x + h * F2x @ K1x
    K2u = F2u + h * F2x @ K1u
    k3, F3x, F3u = jac(x + h * k2, u)
    K3x = F3x + h * F3x @ K2x
    K3u = F3u + h * F3x @ K2u
    k4, F4x, F4u = jac(x + dt * k3, u)
    K4x = F4x + dt * F4x @ K3x
    K4u = F4u + dt * F4x @ K3u

    x_raw = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    A = eye + dt / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    B = dt / 6.0 * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)

    qs = model.quat
    q = x_raw[..., qs]
    nq = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / nq
    P = (np.eye(4) - qh[..., :, None] * qh[..., None, :]) / nq[..., None]
    A[..., qs, :] = P @ A[..., qs, :]
    B[..., qs, :] = P @ B[..., qs, :]
    x_next = x_raw.copy()
    x_next[..., qs] = qh
    return x_next, A, B


def hover_state(model: Model, p=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    x = np.zeros(model.nx)
    x[:3] = p
    x[3:7] = UnitQuaternion.from_yaw(yaw).as_array()
    return x


def rotation_matrix(q) -> np.ndarray:
    return quat_to_rotmat(q)
