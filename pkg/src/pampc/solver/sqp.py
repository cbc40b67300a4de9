"""Gauss-Newton SQP in a real-time iteration scheme (multiple shooting, condensed QP)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import linearize, rk4_step
from ..geometry import perception_residual_batch
from ..obstacles import chance_constraint_batch
from .problem import NlpProblem
from .qp import solve_box_qp

COST_TERMS = ("tracking", "input", "perception", "collision", "alpha")


@dataclass(frozen=True)
class SolverStats:
    iterations: int = 0
    qp_status: str = "none"
    kkt: float = float("inf")
    step_norm: float = float("inf")
    defect: float = float("inf")
    violation: float = 0.0
    converged: bool = False
    status: str = "none"
    qp_iterations: int = 0
    n_constraints: int = 0
    max_slack: float = 0.0
    time_linearize_us: float = 0.0
    time_qp_us: float = 0.0
    time_total_us: float = 0.0

    def as_record(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class SqpSolution:
    """Iterate of the SQP: predicted states, inputs and arbitration values."""

    x: np.ndarray
    u: np.ndarray
    alpha: np.ndarray
    objective: float = float("nan")
    stats: SolverStats = field(default_factory=SolverStats)
    next_warm_start: "SqpSolution | None" = None

    @property
    def u0(self) -> np.ndarray:
        return self.u[0]

    def shifted(self, problem: NlpProblem) -> "SqpSolution":
        """Drop the first stage and extend the tail by repeating the last input."""
        x_tail = rk4_step(problem.model, self.x[-1], self.u[-1], problem.dt)
        x = np.vstack([self.x[1:], x_tail])
        u = np.vstack([self.u[1:], self.u[-1:]])
        alpha = np.concatenate([self.alpha[1:], self.alpha[-1:]])
        return SqpSolution(x, u, alpha)


def cold_start(problem: NlpProblem) -> SqpSolution:
    """Reference states and inputs with ``alpha = 0``; first state set to ``x_init``."""
    x = np.array(problem.reference.x, dtype=float)
    x[0] = problem.x_init
    u = np.clip(problem.reference.u, problem.u_min, problem.u_max)
    return SqpSolution(x, u, np.zeros(problem.N))


def _check_warm_start(problem: NlpProblem, ws: SqpSolution):
    N, nx, nu = problem.N, problem.nx, problem.nu
    if ws.x.shape != (N + 1, nx) or ws.u.shape != (N, nu) or ws.alpha.shape != (N,):
        raise ValueError("warm start dimensions do not match the problem")


# ---------------------------------------------------------------------------
# residuals and their Jacobians


@dataclass
class Linearization:
    """Gauss-Newton model of the objective ``sum ||r_i||^2 + ||r_N||^2``.

    ``Jx`` and ``Jw`` hold stage residual Jacobians w.r.t. the state and the
    stage decision vector ``w_i = [u_i, alpha_i]``.  ``costs`` maps each
    term to its per-stage value (length N+1).
    """

    r: np.ndarray
    Jx: np.ndarray
    Jw: np.ndarray
    rN: np.ndarray
    JN: np.ndarray
    costs: dict
    cons_stage: np.ndarray
    cons_value: np.ndarray
    cons_grad: np.ndarray

    @property
    def objective(self) -> float:
        return float(np.sum(self.r**2) + np.sum(self.rN**2))


def _alpha_bar(problem: NlpProblem, alpha: np.ndarray) -> np.ndarray:
    if not problem.use_alpha:
        return np.ones_like(alpha)
    return 1.0 - alpha / problem.weights.alpha_max


def evaluate(problem: NlpProblem, x, u, alpha, jacobians: bool = True) -> Linearization:
    """Residuals, Jacobians, cost breakdown and constraint data at an iterate."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    W = problem.weights
    N, nx, nu = problem.N, problem.nx, problem.nu
    m = problem.stage_vars
    X = x[:N]
    ref = problem.reference

    blocks_r, blocks_x, blocks_w = [], [], []
    costs = {k: np.zeros(N + 1) for k in COST_TERMS}

    sq = np.sqrt(W.Q_x)
    r = sq * (X - ref.x[:N])
    blocks_r.append(r)
    blocks_x.append(np.broadcast_to(np.diag(sq), (N, nx, nx)))
    blocks_w.append(np.zeros((N, nx, m)))
    costs["tracking"][:N] = np.sum(r**2, axis=1)

    sr = np.sqrt(W.R)
    r = sr * (u - ref.u)
    blocks_r.append(r)
    blocks_x.append(np.zeros((N, nu, nx)))
    Jw = np.zeros((N, nu, m))
    Jw[:, :, :nu] = np.diag(sr)
    blocks_w.append(Jw)
    costs["input"][:N] = np.sum(r**2, axis=1)

    abar = _alpha_bar(problem, alpha)
    if problem.perception is not None:
        ps = problem.perception
        zbar, Jz, _ = perception_residual_batch(
            X[:, :3], X[:, 3:7], ps.extrinsics, ps.intrinsics, ps.line, ps.d_s, ps.distance_from, ps.min_depth
        )
        L = W.perception_sqrt()
        Lz = zbar @ L.T
        r = abar[:, None] * Lz
        Jx = np.zeros((N, 3, nx))
        Jx[:, :, :7] = abar[:, None, None] * np.einsum("ij,njk->nik", L, Jz)
        Jw = np.zeros((N, 3, m))
        if problem.use_alpha:
            Jw[:, :, nu] = -Lz / W.alpha_max
        blocks_r.append(r)
        blocks_x.append(Jx)
        blocks_w.append(Jw)
        costs["perception"][:N] = np.sum(r**2, axis=1)

    if problem.use_alpha:
        sa = np.sqrt(W.Q_alpha)
        blocks_r.append((sa * alpha)[:, None])
        blocks_x.append(np.zeros((N, 1, nx)))
        Jw = np.zeros((N, 1, m))
        Jw[:, 0, nu] = sa
        blocks_w.append(Jw)
        costs["alpha"][:N] = W.Q_alpha * alpha**2

    cons_stage = np.zeros(0, dtype=int)
    cons_value = np.zeros(0)
    cons_grad = np.zeros((0, 3))
    av = problem.avoidance
    if av is not None:
        P = X[:, :3]
        if av.use_cost:
            cp = av.cost_params
            n_obs = len(av.obstacles)
            r = np.zeros((N, n_obs))
            Jx = np.zeros((N, n_obs, nx))
            for j, ob in enumerate(av.obstacles):
                diff = P - ob.center
                d = np.linalg.norm(diff, axis=1)
                z = cp.lambda_o * (d - cp.r_o)
                sig = np.exp(-np.logaddexp(0.0, z))
                s = np.sqrt(cp.Q_o) * np.exp(-0.5 * np.logaddexp(0.0, z))
                ds_dd = -0.5 * cp.lambda_o * s * (1.0 - sig)
                unit = diff / np.where(d > 1e-12, d, 1.0)[:, None]
                r[:, j] = s
                Jx[:, j, :3] = ds_dd[:, None] * unit
            blocks_r.append(r)
            blocks_x.append(Jx)
            blocks_w.append(np.zeros((N, n_obs, m)))
            costs["collision"][:N] = np.sum(r**2, axis=1)
        if av.use_constraint:
            vals, grads = [], []
            dist = np.stack([np.linalg.norm(P - ob.center, axis=1) for ob in av.obstacles], axis=1)
            order = np.argsort(dist, axis=1, kind="stable")[:, : av.k_nearest]
            for j, ob in enumerate(av.obstacles):
                v, g = chance_constraint_batch(P, ob, av.cc_params, av.normalization)
                vals.append(v)
                grads.append(g)
            vals = np.stack(vals, axis=1)
            grads = np.stack(grads, axis=1)
            c = W.c_coupling if problem.use_alpha else 0.0
            floor = -(c + av.drop_margin)
            st, ob_idx = [], []
            # without alpha the stage-0 constraint involves no decision variable
            for i in range(0 if problem.use_alpha else 1, N):
                for j in order[i]:
                    if vals[i, j] > floor:
                        st.append(i)
                        ob_idx.append(j)
            cons_stage = np.array(st, dtype=int)
            ob_idx = np.array(ob_idx, dtype=int)
            cons_value = vals[cons_stage, ob_idx]
            cons_grad = grads[cons_stage, ob_idx]

    sN = np.sqrt(W.Q_xN)
    rN = sN * (x[N] - ref.x[N])
    costs["tracking"][N] = np.sum(rN**2)

    return Linearization(
        r=np.concatenate(blocks_r, axis=1),
        Jx=np.concatenate(blocks_x, axis=1),
        Jw=np.concatenate(blocks_w, axis=1),
        rN=rN,
        JN=np.diag(sN),
        costs=costs,
        cons_stage=cons_stage,
        cons_value=cons_value,
        cons_grad=cons_grad,
    )


def constraint_values(problem: NlpProblem, lin: Linearization, alpha: np.ndarray) -> np.ndarray:
    """Coupled constraint values ``cc + c * alpha_bar`` (feasible when <= 0)."""
    if lin.cons_stage.size == 0:
        return np.zeros(0)
    if problem.use_alpha:
        abar = _alpha_bar(problem, alpha)
        return lin.cons_value + problem.weights.c_coupling * abar[lin.cons_stage]
    return lin.cons_value.copy()


def objective(problem: NlpProblem, x, u, alpha) -> float:
    return evaluate(problem, x, u, alpha).objective


def stage_cost_report(solution: SqpSolution, problem: NlpProblem) -> dict:
    """Per-stage cost columns (length N+1; the last row is the terminal stage)."""
    lin = evaluate(problem, solution.x, solution.u, solution.alpha)
    report = {k: v.copy() for k, v in lin.costs.items()}
    report["total"] = sum(report[k] for k in COST_TERMS)
    return report


# ---------------------------------------------------------------------------
# one SQP iteration


def rti_step(
    problem: NlpProblem,
    warm_start: SqpSolution | None = None,
    shift: bool = True,
    evaluate_objective: bool = True,
) -> SqpSolution:
    """One Gauss-Newton SQP iteration about ``warm_start``.

    The returned solution holds the updated iterate (``u[0]`` is the command
    to apply).  With ``shift`` its ``next_warm_start`` is shifted one stage
    for the next control period; otherwise it is the iterate itself.
    ``evaluate_objective=False`` skips re-evaluating the objective at the new
    iterate (``objective`` is then NaN), saving time inside a control loop.
    """
    t_start = time.perf_counter_ns()
    ws = warm_start if warm_start is not None else cold_start(problem)
    _check_warm_start(problem, ws)
    N, nx, nu = problem.N, problem.nx, problem.nu
    m = problem.stage_vars
    nw = N * m
    W = problem.weights
    x_hat, u_hat, a_hat = ws.x, ws.u, ws.alpha

    x_next, A, B = linearize(problem.model, x_hat[:N], u_hat, problem.dt)
    defect = x_next - x_hat[1:]
    lin = evaluate(problem, x_hat, u_hat, a_hat)

    # condensing: dx_i = e_i + G_i dw
    e = np.zeros((N + 1, nx))
    G = np.zeros((N + 1, nx, nw))
    e[0] = problem.x_init - x_hat[0]
    for i in range(N):
        e[i + 1] = A[i] @ e[i] + defect[i]
        G[i + 1] = A[i] @ G[i]
        G[i + 1][:, i * m : i * m + nu] += B[i]

    nr = lin.r.shape[1]
    Mx = np.einsum("nri,nik->nrk", lin.Jx, G[:N])
    for i in range(N):
        Mx[i, :, i * m : (i + 1) * m] += lin.Jw[i]
    b = lin.r + np.einsum("nri,ni->nr", lin.Jx, e[:N])
    M = np.vstack([Mx.reshape(N * nr, nw), lin.JN @ G[N]])
    bb = np.concatenate([b.reshape(-1), lin.rN + lin.JN @ e[N]])
    H = 2.0 * M.T @ M
    g = 2.0 * M.T @ bb

    lb = np.empty((N, m))
    ub = np.empty((N, m))
    lb[:, :nu] = problem.u_min - u_hat
    ub[:, :nu] = problem.u_max - u_hat
    if problem.use_alpha:
        lb[:, nu] = -a_hat
        ub[:, nu] = W.alpha_max - a_hat
    lb, ub = lb.reshape(-1), ub.reshape(-1)

    # linearized coupled constraints  C dw <= d
    ncons = lin.cons_stage.size
    C = d = None
    viol = 0.0
    if ncons:
        st = lin.cons_stage
        C = np.einsum("ci,cik->ck", lin.cons_grad, G[st, :3, :])
        val = constraint_values(problem, lin, a_hat) + np.einsum("ci,ci->c", lin.cons_grad, e[st, :3])
        if problem.use_alpha:
            C[np.arange(ncons), st * m + nu] -= W.c_coupling / W.alpha_max
        d = -val
        viol = float(max(0.0, constraint_values(problem, lin, a_hat).max()))
    t_lin = time.perf_counter_ns()

    qp = solve_box_qp(H, g, lb, ub, C, d)
    t_qp = time.perf_counter_ns()

    dw = qp.x.reshape(N, m)
    u_new = np.clip(u_hat + dw[:, :nu], problem.u_min, problem.u_max)
    a_new = np.clip(a_hat + dw[:, nu], 0.0, W.alpha_max) if problem.use_alpha else np.zeros(N)
    dw_flat = qp.x
    x_new = x_hat + e + np.einsum("nik,k->ni", G, dw_flat)
    q = x_new[:, problem.model.quat]
    x_new[:, problem.model.quat] = q / np.linalg.norm(q, axis=1, keepdims=True)

    step = float(np.max(np.abs(dw_flat))) if nw else 0.0
    dnorm = float(np.max(np.abs(defect)))
    init_gap = float(np.max(np.abs(e[0])))
    kkt = max(step, dnorm, init_gap, viol)
    t_end = time.perf_counter_ns()
    stats = SolverStats(
        iterations=1,
        qp_status=qp.status,
        kkt=kkt,
        step_norm=step,
        defect=max(dnorm, init_gap),
        violation=viol,
        converged=False,
        status=qp.status,
        qp_iterations=qp.iterations,
        n_constraints=ncons,
        max_slack=float(qp.slack.max()) if qp.slack.size else 0.0,
        time_linearize_us=(t_lin - t_start) / 1e3,
        time_qp_us=(t_qp - t_lin) / 1e3,
        time_total_us=(t_end - t_start) / 1e3,
    )
    obj = objective(problem, x_new, u_new, a_new) if evaluate_objective else float("nan")
    sol = SqpSolution(x_new, u_new, a_new, obj, stats)
    nxt = sol.shifted(problem) if shift else sol
    return replace(sol, next_warm_start=nxt)


def solve_to_convergence(
    problem: NlpProblem,
    tol: float = 1e-8,
    max_iter: int = 50,
    warm_start: SqpSolution | None = None,
) -> SqpSolution:
    """Iterate :func:`rti_step` without shifting until the KKT residual < ``tol``.

    The KKT residual of an iteration is the largest of the step norm, the
    dynamics defect and the coupled constraint violation at the iterate it
    started from.  ``stats.status`` is ``"converged"`` or ``"max_iter"``.
    """
    if not tol >= 0:
        raise ValueError("tol must be non-negative")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    it = warm_start if warm_start is not None else cold_start(problem)
    sol = None
    for k in range(1, max_iter + 1):
        sol = rti_step(problem, it, shift=False)
        if sol.stats.kkt < tol:
            st = replace(sol.stats, iterations=k, converged=True, status="converged")
            return replace(sol, stats=st, next_warm_start=None)
        it = sol
    st = replace(sol.stats, iterations=max_iter, converged=False, status="max_iter")
    return replace(sol, stats=st, next_warm_start=None)


def dynamics_defect(problem: NlpProblem, solution: SqpSolution) -> float:
    """Largest multiple-shooting gap including the initial-state constraint."""
    xn = rk4_step(problem.model, solution.x[:-1], solution.u, problem.dt)
    gaps = np.vstack([xn - solution.x[1:], (solution.x[0] - problem.x_init)[None]])
    return float(np.max(np.abs(gaps)))


class RtiSolver:
    """Stateful real-time iteration: one SQP step per control period.

    The warm start carried between calls is the shifted previous solution.
    A solver instance is meant to be owned by a single control loop.
    """

    def __init__(self):
        self._warm: SqpSolution | None = None

    def reset(self):
        self._warm = None

    def step(self, problem: NlpProblem) -> SqpSolution:
        t0 = time.perf_counter_ns()
        warm = self._warm if self._warm is not None else cold_start(problem)
        sol = rti_step(problem, warm, shift=True, evaluate_objective=False)
        self._warm = sol.next_warm_start
        total = (time.perf_counter_ns() - t0) / 1e3
        return replace(sol, stats=replace(sol.stats, time_total_us=total))
