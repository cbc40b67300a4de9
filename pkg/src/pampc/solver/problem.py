"""Optimal control problem definitions for the classical and perception-aware MPC."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..dynamics import ReducedModel
from ..geometry import CameraIntrinsics, Pose, PowerLine3D, UnitQuaternion
from ..obstacles import ChanceConstraintParams, CollisionCostParams, EllipsoidObstacle


class ProblemError(ValueError):
    """Inconsistent problem data (dimensions, bounds, weights)."""


def _arr(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MpcWeights:
    """Diagonal stage weights plus the arbitration parameters.

    ``Q_p`` may be a 3-vector (diagonal) or a full 3x3 PSD matrix acting on
    the perception residual ``(theta [rad], r [px], d - d_s [m])``.
    """

    Q_x: np.ndarray
    Q_xN: np.ndarray
    R: np.ndarray
    Q_p: np.ndarray = field(default_factory=lambda: np.array([20.0, 4e-3, 5.0]))
    Q_alpha: float = 10.0
    alpha_max: float = 1.0
    c_coupling: float = 1.0

    def __post_init__(self):
        for name in ("Q_x", "Q_xN", "R"):
            a = _arr(getattr(self, name))
            if a.ndim != 1 or np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ProblemError(f"{name} must be a non-negative vector")
            object.__setattr__(self, name, a)
        Qp = _arr(self.Q_p)
        if Qp.shape == (3,):
            if np.any(Qp < 0):
                raise ProblemError("Q_p must be PSD")
        elif Qp.shape == (3, 3):
            if not np.allclose(Qp, Qp.T) or np.linalg.eigvalsh(Qp).min() < -1e-12:
                raise ProblemError("Q_p must be symmetric PSD")
        else:
            raise ProblemError("Q_p must be a 3-vector or a 3x3 matrix")
        object.__setattr__(self, "Q_p", Qp)
        if self.Q_alpha < 0:
            raise ProblemError("Q_alpha must be non-negative")
        if not self.alpha_max > 0:
            raise ProblemError("alpha_max must be positive")
        if self.c_coupling < 0:
            raise ProblemError("c_coupling must be non-negative")

    @classmethod
    def default(cls, **overrides) -> "MpcWeights":
        base = dict(
            # stiff yaw: otherwise the solver shrinks the image offset by viewing the line obliquely
            Q_x=np.array([4.0, 4.0, 8.0, 0.0, 5.0, 5.0, 20.0, 0.5, 0.5, 0.5]),
            Q_xN=np.array([8.0, 8.0, 16.0, 0.0, 5.0, 5.0, 20.0, 1.0, 1.0, 1.0]),
            R=np.array([0.05, 0.2, 0.2, 0.2]),
        )
        base.update(overrides)
        return cls(**base)

    def perception_sqrt(self) -> np.ndarray:
        """Matrix ``L`` with ``L^T L = Q_p``."""
        if self.Q_p.ndim == 1:
            return np.diag(np.sqrt(self.Q_p))
        lam, V = np.linalg.eigh(self.Q_p)
        return V @ np.diag(np.sqrt(np.clip(lam, 0.0, None))) @ V.T


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Per-stage state and input setpoints for one horizon."""

    x: np.ndarray
    u: np.ndarray
    dt: float

    def __post_init__(self):
        x = _arr(self.x)
        u = _arr(self.u)
        if x.ndim != 2 or u.ndim != 2 or x.shape[0] != u.shape[0] + 1:
            raise ProblemError("reference needs N+1 states and N inputs")
        if not self.dt > 0:
            raise ProblemError("dt must be positive")
        qn = np.linalg.norm(x[:, 3:7], axis=1)
        if not np.allclose(qn, 1.0, atol=1e-9):
            raise ProblemError("reference quaternions must be unit-norm")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def N(self) -> int:
        return self.u.shape[0]


def hover_reference(model: ReducedModel, p, N: int, dt: float, yaw: float = 0.0) -> ReferenceTrajectory:
    x = np.zeros((N + 1, model.nx))
    x[:, :3] = p
    x[:, 3:7] = UnitQuaternion.from_yaw(yaw).as_array()
    return ReferenceTrajectory(x, np.tile(model.hover_input(), (N, 1)), dt)


def straight_line_reference(
    model: ReducedModel,
    start,
    end,
    speed: float,
    t0: float,
    N: int,
    dt: float,
    yaw: float = 0.0,
) -> ReferenceTrajectory:
    """Constant-speed segment from ``start`` to ``end``, holding at the end."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    direction = (end - start) / length if length > 0 else np.zeros(3)
    t = t0 + dt * np.arange(N + 1)
    s = np.clip(speed * t, 0.0, length)
    x = np.zeros((N + 1, model.nx))
    x[:, :3] = start + s[:, None] * direction
    moving = speed * t < length
    x[:, 7:10] = np.where(moving[:, None], speed * direction, 0.0)
    x[:, 3:7] = UnitQuaternion.from_yaw(yaw).as_array()
    return ReferenceTrajectory(x, np.tile(model.hover_input(), (N, 1)), dt)


@dataclass(frozen=True)
class PerceptionSetup:
    line: PowerLine3D
    extrinsics: Pose
    intrinsics: CameraIntrinsics
    d_s: float
    distance_from: str = "body"
    min_depth: float = 0.1


@dataclass(frozen=True)
class AvoidanceSetup:
    obstacles: tuple[EllipsoidObstacle, ...]
    cc_params: ChanceConstraintParams = field(default_factory=ChanceConstraintParams)
    cost_params: CollisionCostParams = field(default_factory=CollisionCostParams)
    k_nearest: int = 3
    use_cost: bool = True
    use_constraint: bool = True
    normalization: str = "transformed"
    # constraints whose value stays below -(c + drop_margin) are omitted
    drop_margin: float = 4.0


@dataclass(frozen=True)
class NlpProblem:
    """Horizon data for one MPC solve.

    ``use_alpha`` augments every stage with the arbitration variable; when
    it is off the perception weight is fixed at full strength and the chance
    constraint is enforced without relaxation.
    """

    model: ReducedModel
    reference: ReferenceTrajectory
    x_init: np.ndarray
    weights: MpcWeights
    u_min: np.ndarray
    u_max: np.ndarray
    perception: PerceptionSetup | None = None
    avoidance: AvoidanceSetup | None = None
    use_alpha: bool = False

    @property
    def N(self) -> int:
        return self.reference.N

    @property
    def dt(self) -> float:
        return self.reference.dt

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    @property
    def stage_vars(self) -> int:
        return self.nu + (1 if self.use_alpha else 0)

    def with_x_init(self, x_init) -> "NlpProblem":
        return replace(self, x_init=_arr(x_init, (self.nx,)))


def _validate(model, weights, reference, x_init, u_min, u_max):
    nx, nu = model.nx, model.nu
    if reference.x.shape[1] != nx or reference.u.shape[1] != nu:
        raise ProblemError(f"reference dimensions {reference.x.shape}/{reference.u.shape} do not match model")
    if weights.Q_x.shape != (nx,) or weights.Q_xN.shape != (nx,) or weights.R.shape != (nu,):
        raise ProblemError("weight dimensions do not match model")
    x_init = np.asarray(x_init, dtype=float)
    if x_init.shape != (nx,):
        raise ProblemError(f"x_init must have {nx} entries")
    u_min = np.asarray(u_min, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    if u_min.shape != (nu,) or u_max.shape != (nu,):
        raise ProblemError("input bounds must match the input dimension")
    if np.any(u_min > u_max):
        raise ProblemError("infeasible input bounds: u_min > u_max")
    return _arr(x_init), _arr(u_min), _arr(u_max)


def build_classical(
    weights: MpcWeights,
    reference: ReferenceTrajectory,
    x_init,
    model: ReducedModel | None = None,
    u_min=None,
    u_max=None,
) -> NlpProblem:
    """Reference-tracking MPC with RK4 dynamics and input bounds."""
    model = model or ReducedModel()
    u_min = model.u_min if u_min is None else u_min
    u_max = model.u_max if u_max is None else u_max
    x_init, u_min, u_max = _validate(model, weights, reference, x_init, u_min, u_max)
    return NlpProblem(model, reference, x_init, weights, u_min, u_max)


def build_pampc(
    weights: MpcWeights,
    reference: ReferenceTrajectory,
    x_init,
    line: PowerLine3D | None,
    obstacles: Sequence[EllipsoidObstacle],
    cc_params: ChanceConstraintParams,
    cost_params: CollisionCostParams,
    d_s: float,
    extrinsics: Pose | None = None,
    intrinsics: CameraIntrinsics | None = None,
    model: ReducedModel | None = None,
    use_alpha: bool = True,
    use_collision_cost: bool = True,
    use_chance_constraint: bool = True,
    k_nearest: int = 3,
    normalization: str = "transformed",
    distance_from: str = "body",
    u_min=None,
    u_max=None,
) -> NlpProblem:
    """Perception-aware MPC; ``line=None`` or empty ``obstacles`` drop a term.

    The tracking-only and avoidance-only variants are obtained with
    ``obstacles=()`` / ``line=None`` and ``use_alpha=False``.
    """
    base = build_classical(weights, reference, x_init, model, u_min, u_max)
    perception = None
    if line is not None:
        if extrinsics is None or intrinsics is None:
            raise ProblemError("camera extrinsics and intrinsics are required for line tracking")
        perception = PerceptionSetup(line, extrinsics, intrinsics, float(d_s), distance_from)
    avoidance = None
    if obstacles:
        avoidance = AvoidanceSetup(
            tuple(obstacles),
            cc_params,
            cost_params,
            k_nearest=k_nearest,
            use_cost=use_collision_cost,
            use_constraint=use_chance_constraint,
            normalization=normalization,
        )
    return replace(base, perception=perception, avoidance=avoidance, use_alpha=bool(use_alpha))
