"""Independent reference computations shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfinv

from pampc.dynamics import FullModel, rk4_step
from pampc.geometry import CameraIntrinsics, Pose, PowerLine3D, UnitQuaternion
from pampc.obstacles import (
    ChanceConstraintParams,
    CollisionCostParams,
    EllipsoidObstacle,
    chance_constraint_residual,
    omega_matrix,
)
from pampc.solver import MpcWeights, build_pampc, evaluate, straight_line_reference
from pampc.dynamics import ReducedModel, linearize

# ---------------------------------------------------------------------------
# integrator order


def rk4_order_slope(dts=(0.1, 0.05, 0.025, 0.0125), T: float = 1.0, refine: int = 16) -> float:
    """Log-log slope of the RK4 global error against a ``dt / refine`` solution.

    Full nonlinear model with tumbling rates and unequal rotor thrusts.
    """
    model = FullModel()
    x0 = np.zeros(13)
    x0[3:7] = UnitQuaternion.from_axis_angle([0.3, -0.5, 1.0], 0.7).as_array()
    x0[7:10] = [1.0, -0.5, 0.3]
    x0[10:13] = [2.0, -1.5, 3.0]
    u = np.array([1.5, 2.5, 1.8, 2.2])

    def run(dt):
        x = x0.copy()
        for _ in range(int(round(T / dt))):
            x = rk4_step(model, x, u, dt)
        return x

    errs = [np.linalg.norm(run(dt) - run(dt / refine)) for dt in dts]
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


# ---------------------------------------------------------------------------
# solver gradients


K_TEST = CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240)
EXT_SIDE = Pose(np.zeros(3), UnitQuaternion.from_matrix(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])))


def random_pampc_problem(rng: np.random.Generator, N: int = 8):
    """Perception + avoidance problem with alpha and a random iterate near the reference."""
    model = ReducedModel()
    start = np.array([rng.uniform(-3, 0), rng.uniform(-0.5, 0.5), 2.0])
    end = start + np.array([6.0, 0.0, 0.0])
    ref = straight_line_reference(model, start, end, 1.5, 0.0, N, 0.05)
    line = PowerLine3D([-10.0, -2.0, 2.0], [25.0, -2.0, 2.0])
    obstacles = [
        EllipsoidObstacle([x, rng.uniform(-0.5, 0.5), 2.0], [0.3, 0.3, 2.0], covariance=np.full(3, 0.01))
        for x in (start[0] + 1.0, start[0] + 3.0)
    ]
    w = MpcWeights.default()
    prob = build_pampc(
        w, ref, ref.x[0], line, obstacles,
        ChanceConstraintParams(0.05, 0.3, 0.01 * np.eye(3)), CollisionCostParams(),
        2.0, EXT_SIDE, K_TEST, model=model,
    )  # fmt: skip
    x = np.array(ref.x) + rng.normal(scale=0.05, size=ref.x.shape)
    x[:, 3:7] /= np.linalg.norm(x[:, 3:7], axis=1, keepdims=True)
    u = np.array(ref.u) + rng.normal(scale=[0.5, 0.2, 0.2, 0.2], size=ref.u.shape)
    alpha = rng.uniform(0.05, 0.95, size=N)
    return prob, x, u, alpha


def richardson(f, z0: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Jacobian of ``f`` at ``z0`` by Richardson-extrapolated central differences.

    Columns are ``(4 D(h/2) - D(h)) / 3`` with ``D`` the central difference,
    so truncation error is O(h^4) and a large step keeps rounding small.
    """
    z0 = np.asarray(z0, dtype=float)
    cols = []
    for k in range(z0.size):
        e = np.zeros_like(z0)
        e[k] = 1.0

        def D(s):
            return (np.asarray(f(z0 + s * e)) - np.asarray(f(z0 - s * e))) / (2 * s)

        cols.append((4.0 * D(h / 2) - D(h)) / 3.0)
    return np.stack(cols, axis=-1)


def _rel_err(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(prob, x, u, alpha, h: float = 1e-3) -> float:
    """Largest per-entry relative error of the assembled gradients.

    Covers the objective gradient (from the Gauss-Newton residual Jacobians,
    ``2 J^T r``), the coupled constraint gradients and the discrete dynamics
    Jacobians, each against :func:`richardson` differences.  Entries are
    compared relative to ``max(|a|, |b|)`` floored at 1e-6 of the largest
    entry of the same gradient, so exact zeros do not divide by zero.
    """
    N, nx, nu = prob.N, prob.nx, prob.nu
    worst = 0.0

    lin = evaluate(prob, x, u, alpha)
    gx = np.zeros_like(x)
    gx[:N] = 2.0 * np.einsum("nri,nr->ni", lin.Jx, lin.r)
    gx[N] = 2.0 * lin.JN.T @ lin.rN
    gw = 2.0 * np.einsum("nrk,nr->nk", lin.Jw, lin.r)
    analytic = np.concatenate([gx.ravel(), gw[:, :nu].ravel(), gw[:, nu]])

    def f(z):
        xs = z[: x.size].reshape(x.shape)
        us = z[x.size : x.size + u.size].reshape(u.shape)
        al = z[x.size + u.size :]
        return evaluate(prob, xs, us, al, jacobians=False).objective

    z0 = np.concatenate([x.ravel(), u.ravel(), alpha])
    fd = richardson(f, z0, h)
    worst = max(worst, float(_rel_err(analytic, fd, 1e-6 * np.abs(fd).max()).max()))

    # coupled chance constraints cc(p_i) + c (1 - alpha_i / alpha_max)
    c = prob.weights.c_coupling
    am = prob.weights.alpha_max
    av = prob.avoidance
    for st_i, val, grad in zip(lin.cons_stage, lin.cons_value, lin.cons_grad):
        j = int(np.argmin([abs(chance_constraint_residual(x[st_i, :3], None, ob, av.cc_params) - val) for ob in av.obstacles]))
        ob = av.obstacles[j]

        def g(p):
            return chance_constraint_residual(p, None, ob, av.cc_params, av.normalization)

        fdp = richardson(g, x[st_i, :3], h)
        worst = max(worst, float(_rel_err(grad, fdp, 1e-6 * np.abs(fdp).max()).max()))
        fda = (c * (1 - (alpha[st_i] + h) / am) - c * (1 - (alpha[st_i] - h) / am)) / (2 * h)
        worst = max(worst, abs(-c / am - fda) / abs(fda))

    # dynamics Jacobians of the RK4 map
    _, A, B = linearize(prob.model, x[:N], u, prob.dt)
    for i in range(0, N, max(1, N // 3)):
        fa = richardson(lambda z: rk4_step(prob.model, z, u[i], prob.dt), x[i], h)
        fb = richardson(lambda z: rk4_step(prob.model, x[i], z, prob.dt), u[i], h)
        worst = max(worst, float(_rel_err(A[i], fa, 1e-6 * np.abs(fa).max()).max()))
        worst = max(worst, float(_rel_err(B[i], fb, 1e-6 * np.abs(fb).max()).max()))
    return worst


# ---------------------------------------------------------------------------
# chance constraint soundness


def random_obstacle(rng: np.random.Generator) -> EllipsoidObstacle:
    axes = rng.uniform(0.2, 2.0, size=3)
    R = UnitQuaternion.from_array(rng.normal(size=4)).to_matrix()
    A = rng.normal(size=(3, 3)) * rng.uniform(0.02, 0.2)
    return EllipsoidObstacle(rng.normal(scale=3.0, size=3), axes, R, A @ A.T)


def boundary_configuration(rng: np.random.Generator, delta: float):
    """Random obstacle, body covariance and a body mean with residual exactly 0."""
    obs = random_obstacle(rng)
    A = rng.normal(size=(3, 3)) * rng.uniform(0.02, 0.2)
    params = ChanceConstraintParams(delta, rng.uniform(0.0, 0.5), A @ A.T)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)

    def g(s):
        return chance_constraint_residual(obs.center + s * u, None, obs, params)

    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    s = brentq(g, 1e-9, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    return obs, params, obs.center + s * u


def collision_probability(p_B, obs: EllipsoidObstacle, params: ChanceConstraintParams, n: int, rng) -> float:
    """Fraction of Gaussian draws of body and obstacle positions inside the inflated ellipsoid."""
    pb = rng.multivariate_normal(p_B, params.Sigma_B, size=n, method="eigh")
    po = rng.multivariate_normal(obs.center, obs.covariance, size=n, method="eigh")
    d = pb - po
    Om = omega_matrix(obs, params.r)
    return float(np.mean(np.einsum("ni,ij,nj->n", d, Om, d) <= 1.0))


def erf_inv_reference(y: float) -> float:
    return float(erfinv(y))


# ---------------------------------------------------------------------------
# assignment


def brute_force_assignment(C: np.ndarray) -> float:
    """Minimum total cost over every injective map of the smaller side.

    Each candidate is summed in ascending row order so an optimal assignment
    summed the same way compares with exact equality.
    """
    n, m = C.shape
    if n <= m:
        return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    best = math.inf
    for p in itertools.permutations(range(n), m):
        total = 0.0
        for r, c in sorted(zip(p, range(m))):
            total += C[r, c]
        best = min(best, total)
    return best


def one_sided_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 1e-300) / n)
