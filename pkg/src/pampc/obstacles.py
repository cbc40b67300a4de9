"""Ellipsoidal obstacles, logistic collision cost and Gaussian chance constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import UnitQuaternion


class DegenerateDirectionError(ValueError):
    """The body and obstacle means coincide, so the constraint normal is undefined."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EllipsoidObstacle:
    """Ellipsoid with centre ``center``, semi-axes and position covariance.

    ``rotation`` is the matrix entering ``Omega = R^T diag(...) R``; its rows
    are the principal axes expressed in the world frame.
    """

    center: np.ndarray
    semi_axes: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    render_height: float | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        ax = np.asarray(self.semi_axes, dtype=float).reshape(3)
        R = self.rotation
        if isinstance(R, UnitQuaternion):
            R = R.to_matrix()
        R = np.asarray(R, dtype=float)
        if R.shape == (4,):
            R = UnitQuaternion.from_array(R).to_matrix()
        S = np.asarray(self.covariance, dtype=float)
        if S.shape == (3,):
            S = np.diag(S)
        if not np.all(np.isfinite(c)):
            raise ValueError("obstacle centre must be finite")
        if not np.all(ax > 0):
            raise ValueError("semi-axes must be positive")
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if S.shape != (3, 3) or not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("covariance must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(S).min() < -1e-12:
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "semi_axes", _frozen(ax))
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "covariance", _frozen(S))
        if self.render_height is None:
            object.__setattr__(self, "render_height", float(2.0 * ax[2]))


@dataclass(frozen=True)
class CollisionCostParams:
    Q_o: float = 10.0
    lambda_o: float = 4.0
    r_o: float = 1.0

    def __post_init__(self):
        if self.Q_o < 0 or self.lambda_o <= 0 or self.r_o <= 0:
            raise ValueError("require Q_o >= 0, lambda_o > 0, r_o > 0")


@dataclass(frozen=True)
class ChanceConstraintParams:
    delta: float = 0.05
    r: float = 0.3
    Sigma_B: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        # delta = 0.5 (zero margin) and r = 0 (point robot) are admitted as limits
        if not 0.0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        if not self.r >= 0:
            raise ValueError("safety radius must be non-negative")
        S = np.asarray(self.Sigma_B, dtype=float)
        if S.shape == (3,):
            S = np.diag(S)
        object.__setattr__(self, "Sigma_B", _frozen(S))


# ---------------------------------------------------------------------------


def collision_cost(d_o, params: CollisionCostParams):
    """Logistic cost ``Q_o / (1 + exp(lambda_o (d_o - r_o)))``."""
    z = params.lambda_o * (np.asarray(d_o, dtype=float) - params.r_o)
    # exp(-z)/(1+exp(-z)) avoids overflow for large positive z
    out = params.Q_o * np.exp(-np.logaddexp(0.0, z))
    return float(out) if np.ndim(out) == 0 else out


def collision_cost_grad(d_o, params: CollisionCostParams):
    """Derivative of :func:`collision_cost` w.r.t. ``d_o``."""
    z = params.lambda_o * (np.asarray(d_o, dtype=float) - params.r_o)
    s = np.exp(-np.logaddexp(0.0, z))  # 1/(1+e^z)
    return -params.Q_o * params.lambda_o * s * (1.0 - s)


def omega_matrix(obs: EllipsoidObstacle, r: float) -> np.ndarray:
    """``R^T diag(1/(a+r)^2, 1/(b+r)^2, 1/(c+r)^2) R``."""
    if r < 0:
        raise ValueError("r must be non-negative")
    R = obs.rotation
    return R.T @ np.diag(1.0 / (obs.semi_axes + r) ** 2) @ R


def omega_sqrt(obs: EllipsoidObstacle, r: float) -> np.ndarray:
    R = obs.rotation
    return R.T @ np.diag(1.0 / (obs.semi_axes + r)) @ R


def in_collision(p_WB, obs: EllipsoidObstacle, r: float) -> bool:
    d = np.asarray(p_WB, dtype=float) - obs.center
    return bool(d @ omega_matrix(obs, r) @ d <= 1.0)


# ---------------------------------------------------------------------------
# inverse error function

_WINITZKI_A = 0.147


def erf_inv(y: float) -> float:
    """Inverse of :func:`math.erf` on (-1, 1).

    Closed-form initial guess (about 2e-3 relative error) polished with
    Newton steps on ``erf(x) - y``.
    """
    y = float(y)
    if not -1.0 < y < 1.0:
        raise ValueError("erf_inv is defined on the open interval (-1, 1)")
    if y == 0.0:
        return 0.0
    ln = math.log1p(-y * y)
    t = 2.0 / (math.pi * _WINITZKI_A) + 0.5 * ln
    x = math.copysign(math.sqrt(math.sqrt(t * t - ln / _WINITZKI_A) - t), y)
    two_over_sqrt_pi = 2.0 / math.sqrt(math.pi)
    for _ in range(50):
        step = (math.erf(x) - y) / (two_over_sqrt_pi * math.exp(-x * x))
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


# ---------------------------------------------------------------------------
# chance constraint


def _normal(S: np.ndarray, diff: np.ndarray, normalization: str):
    if normalization == "transformed":
        y = S @ diff
        ny = np.linalg.norm(y)
        if ny < 1e-12:
            raise DegenerateDirectionError("body and obstacle means coincide")
        n = y / ny
        Dn = (np.eye(3) - np.outer(n, n)) @ S / ny
    elif normalization == "euclidean":
        nd = np.linalg.norm(diff)
        if nd < 1e-12:
            raise DegenerateDirectionError("body and obstacle means coincide")
        n = diff / nd
        Dn = (np.eye(3) - np.outer(n, n)) / nd
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return n, Dn


def chance_constraint_residual(
    p_hat_B,
    Sigma_B,
    obs: EllipsoidObstacle,
    cc_params: ChanceConstraintParams,
    normalization: str = "transformed",
    return_grad: bool = False,
):
    """Deterministic chance constraint ``cc <= 0`` (feasible when non-positive).

    ``cc = erfinv(1 - 2 delta) sqrt(2 n^T S (Sigma_B + Sigma_o) S n) + 1 - n^T S (p_B - p_O)``
    with ``S = Omega^(1/2)``.  With ``return_grad`` the gradient w.r.t.
    ``p_hat_B`` is returned as well.
    """
    Sigma_B = cc_params.Sigma_B if Sigma_B is None else np.asarray(Sigma_B, dtype=float)
    if Sigma_B.shape == (3,):
        Sigma_B = np.diag(Sigma_B)
    diff = np.asarray(p_hat_B, dtype=float) - obs.center
    S = omega_sqrt(obs, cc_params.r)
    n, Dn = _normal(S, diff, normalization)
    M = S @ (Sigma_B + obs.covariance) @ S
    k = erf_inv(1.0 - 2.0 * cc_params.delta)
    quad = max(float(n @ M @ n), 0.0)
    root = math.sqrt(2.0 * quad)
    Sd = S @ diff
    value = k * root + 1.0 - float(n @ Sd)
    if not return_grad:
        return value
    grad = -(Dn.T @ Sd + S @ n)
    if root > 1e-15:
        grad = grad + k * (2.0 * Dn.T @ (M @ n)) / root
    return value, grad


def chance_margin(obs: EllipsoidObstacle, cc_params: ChanceConstraintParams, n) -> float:
    """Uncertainty margin ``erfinv(1-2 delta) sqrt(2 n^T S Sigma S n)`` along ``n``."""
    S = omega_sqrt(obs, cc_params.r)
    M = S @ (cc_params.Sigma_B + obs.covariance) @ S
    return erf_inv(1.0 - 2.0 * cc_params.delta) * math.sqrt(2.0 * max(float(n @ M @ n), 0.0))


def chance_constraint_batch(
    p_hat_B: np.ndarray,
    obs: EllipsoidObstacle,
    cc_params: ChanceConstraintParams,
    normalization: str = "transformed",
):
    """Vectorized :func:`chance_constraint_residual` over positions ``(n, 3)``.

    Returns ``(values (n,), grads (n, 3))``.  Positions that coincide with
    the obstacle centre are nudged along world y so the normal stays defined.
    """
    P = np.atleast_2d(np.asarray(p_hat_B, dtype=float))
    S = omega_sqrt(obs, cc_params.r)
    M = S @ (cc_params.Sigma_B + obs.covariance) @ S
    k = erf_inv(1.0 - 2.0 * cc_params.delta)
    diff = P - obs.center
    tiny = np.linalg.norm(diff, axis=1) < 1e-9
    if np.any(tiny):
        diff = diff.copy()
        diff[tiny] = (0.0, 1e-9, 0.0)
    y = diff @ S.T
    eye = np.eye(3)
    if normalization == "transformed":
        ny = np.linalg.norm(y, axis=1)
        n = y / ny[:, None]
        Dn = (eye - n[:, :, None] * n[:, None, :]) @ S / ny[:, None, None]
    elif normalization == "euclidean":
        nd = np.linalg.norm(diff, axis=1)
        n = diff / nd[:, None]
        Dn = (eye - n[:, :, None] * n[:, None, :]) / nd[:, None, None]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    Mn = n @ M.T
    quad = np.clip(np.einsum("ni,ni->n", n, Mn), 0.0, None)
    root = np.sqrt(2.0 * quad)
    values = k * root + 1.0 - np.einsum("ni,ni->n", n, y)
    grads = -(np.einsum("nji,nj->ni", Dn, y) + n @ S.T)
    safe = root > 1e-15
    if np.any(safe):
        grads[safe] += k * 2.0 * np.einsum("nji,nj->ni", Dn[safe], Mn[safe]) / root[safe, None]
    return values, grads
