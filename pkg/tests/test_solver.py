import numpy as np
import pytest

from pampc.dynamics import ReducedModel, hover_state, rk4_step
from pampc.geometry import PowerLine3D
from pampc.obstacles import ChanceConstraintParams, CollisionCostParams, EllipsoidObstacle
from pampc.solver import (
    COST_TERMS,
    MpcWeights,
    ProblemError,
    RtiSolver,
    build_classical,
    build_pampc,
    cold_start,
    constraint_values,
    dynamics_defect,
    evaluate,
    hover_reference,
    rti_step,
    solve_box_qp,
    solve_to_convergence,
    stage_cost_report,
    straight_line_reference,
)

from oracles import EXT_SIDE, K_TEST

MODEL = ReducedModel()
DT = 0.05
N = 20
LINE = PowerLine3D([-10.0, -2.0, 2.0], [25.0, -2.0, 2.0])
CC = ChanceConstraintParams(0.05, 0.3, 0.01 * np.eye(3))


def hover_problem(p=(0.0, 0.0, 2.0), x_init=None):
    ref = hover_reference(MODEL, p, N, DT)
    x0 = ref.x[0] if x_init is None else x_init
    return build_classical(MpcWeights.default(), ref, x0, MODEL)


def mast(x, y=0.0):
    return EllipsoidObstacle([x, y, 2.0], [0.3, 0.3, 2.0], covariance=np.full(3, 0.01))


def avoidance_problem(use_alpha=True, weights=None, line=LINE, obstacles=None, start=(-1.5, 0.0, 2.0)):
    ref = straight_line_reference(MODEL, start, np.add(start, [6.0, 0, 0]), 1.5, 0.0, N, DT)
    obstacles = [mast(0.0, 0.05)] if obstacles is None else obstacles
    return build_pampc(
        weights or MpcWeights.default(), ref, ref.x[0], line, obstacles, CC, CollisionCostParams(),
        2.0, EXT_SIDE, K_TEST, model=MODEL, use_alpha=use_alpha,
    )  # fmt: skip


class TestClassical:
    def test_hover_is_optimal(self):
        prob = hover_problem()
        sol = solve_to_convergence(prob)
        assert sol.stats.status == "converged"
        np.testing.assert_allclose(sol.u, np.tile(MODEL.hover_input(), (N, 1)), atol=1e-9)
        assert sol.objective < 1e-14

    def test_cold_start_hover_has_no_defect(self):
        assert dynamics_defect(hover_problem(), cold_start(hover_problem())) < 1e-9

    def test_offset_closed_loop(self):
        x = hover_state(MODEL, [1.0, 0.0, 2.0])
        solver = RtiSolver()
        for _ in range(120):
            sol = solver.step(hover_problem(x_init=x))
            x = rk4_step(MODEL, x, sol.u0, DT)
        assert np.linalg.norm(x[:3] - [0.0, 0.0, 2.0]) < 0.05

    def test_infeasible_bounds(self):
        ref = hover_reference(MODEL, [0, 0, 2], N, DT)
        u_max = MODEL.u_max.copy()
        u_max[0] = MODEL.u_min[0] - 1.0
        with pytest.raises(ProblemError):
            build_classical(MpcWeights.default(), ref, ref.x[0], MODEL, u_max=u_max)

    def test_bad_dimensions(self):
        ref = hover_reference(MODEL, [0, 0, 2], N, DT)
        with pytest.raises(ProblemError):
            build_classical(MpcWeights.default(), ref, np.zeros(9), MODEL)
        with pytest.raises(ProblemError):
            MpcWeights.default(R=np.array([-1.0, 0, 0, 0]))

    def test_max_iter_status(self):
        x = hover_state(MODEL, [1.0, 0.0, 2.0])
        sol = solve_to_convergence(hover_problem(x_init=x), tol=0.0, max_iter=3)
        assert sol.stats.status == "max_iter"
        assert sol.stats.iterations == 3

    def test_bounds_hold_exactly(self):
        x = hover_state(MODEL, [4.0, -3.0, 0.0])
        sol = rti_step(hover_problem(x_init=x))
        assert np.all(sol.u >= MODEL.u_min) and np.all(sol.u <= MODEL.u_max)
        assert np.any(sol.u == MODEL.u_max) or np.any(sol.u == MODEL.u_min)


class TestPampc:
    def test_no_obstacles_keeps_alpha_zero(self):
        prob = avoidance_problem(obstacles=[])
        sol = solve_to_convergence(prob, tol=1e-9)
        assert sol.stats.status == "converged"
        assert sol.alpha.max() < 1e-3

    def test_zero_perception_weight_matches_avoidance_only(self):
        w = MpcWeights.default(Q_p=np.zeros(3))
        a = solve_to_convergence(avoidance_problem(use_alpha=False, weights=w), tol=1e-10)
        b = solve_to_convergence(avoidance_problem(use_alpha=False, weights=w, line=None), tol=1e-10)
        np.testing.assert_allclose(a.u, b.u, atol=1e-8)
        np.testing.assert_allclose(a.x, b.x, atol=1e-8)

    def test_perception_off_has_no_perception_cost(self):
        prob = avoidance_problem(line=None, use_alpha=False)
        rep = stage_cost_report(solve_to_convergence(prob), prob)
        assert np.all(rep["perception"] == 0.0)

    def test_cost_report_sums_to_objective(self):
        prob = avoidance_problem()
        sol = rti_step(prob)
        rep = stage_cost_report(sol, prob)
        assert set(COST_TERMS) | {"total"} == set(rep)
        assert all(len(v) == N + 1 for v in rep.values())
        assert rep["total"].sum() == pytest.approx(sol.objective, rel=1e-12)
        np.testing.assert_allclose(rep["total"], sum(rep[k] for k in COST_TERMS))

    @pytest.mark.parametrize("use_alpha", [False, True])
    def test_constraints_hold_at_solution(self, use_alpha):
        prob = avoidance_problem(use_alpha=use_alpha)
        sol = solve_to_convergence(prob, tol=1e-9, max_iter=100)
        assert sol.stats.status == "converged"
        lin = evaluate(prob, sol.x, sol.u, sol.alpha)
        assert lin.cons_stage.size > 0
        assert constraint_values(prob, lin, sol.alpha).max() <= 1e-6
        assert dynamics_defect(prob, sol) < 1e-8

    def test_alpha_rises_near_obstacle(self):
        sol = solve_to_convergence(avoidance_problem(), tol=1e-9, max_iter=100)
        assert sol.alpha.max() > 0.1
        assert np.all((sol.alpha >= 0) & (sol.alpha <= 1.0))

    def test_alpha_monotone_in_coupling(self):
        means = []
        for c in (0.25, 0.5, 1.0, 2.0):
            prob = avoidance_problem(weights=MpcWeights.default(c_coupling=c))
            means.append(solve_to_convergence(prob, tol=1e-9, max_iter=100).alpha.mean())
        assert np.all(np.diff(means) > 0)

    def test_warm_start_at_optimum(self):
        prob = avoidance_problem()
        sol = solve_to_convergence(prob, tol=1e-10, max_iter=100)
        again = rti_step(prob, sol, shift=False)
        assert again.stats.step_norm < 1e-8
        assert np.abs(again.u0 - sol.u0).max() < 1e-6

    def test_repeated_rti_matches_converged(self):
        prob = avoidance_problem()
        ref = solve_to_convergence(prob, tol=1e-10, max_iter=100)
        it = cold_start(prob)
        for _ in range(40):
            it = rti_step(prob, it, shift=False)
        np.testing.assert_allclose(it.u, ref.u, atol=1e-6)
        np.testing.assert_allclose(it.alpha, ref.alpha, atol=1e-6)

    def test_deterministic(self):
        prob = avoidance_problem()
        a, b = rti_step(prob), rti_step(prob)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.x, b.x) and np.array_equal(a.alpha, b.alpha)

    def test_shift(self):
        prob = avoidance_problem()
        sol = rti_step(prob)
        nxt = sol.next_warm_start
        np.testing.assert_array_equal(nxt.x[:-1], sol.x[1:])
        np.testing.assert_array_equal(nxt.u[:-1], sol.u[1:])
        np.testing.assert_array_equal(nxt.u[-1], sol.u[-1])
        np.testing.assert_array_equal(nxt.alpha[:-1], sol.alpha[1:])
        np.testing.assert_allclose(nxt.x[-1], rk4_step(MODEL, sol.x[-1], sol.u[-1], DT))

    def test_warm_start_shape_checked(self):
        prob = avoidance_problem()
        bad = cold_start(hover_problem())
        bad = type(bad)(bad.x[:-2], bad.u[:-2], bad.alpha[:-2])
        with pytest.raises(ValueError):
            rti_step(prob, bad)


class TestQp:
    def test_box_only(self):
        H = np.diag([2.0, 2.0])
        g = np.array([-4.0, 2.0])
        res = solve_box_qp(H, g, np.array([-1.0, -0.5]), np.array([1.0, 1.0]))
        assert res.status == "optimal"
        np.testing.assert_allclose(res.x, [1.0, -0.5], atol=1e-8)

    def test_inequality_active(self):
        H = np.eye(2)
        g = np.array([-1.0, -1.0])
        res = solve_box_qp(H, g, -np.ones(2) * 10, np.ones(2) * 10, np.array([[1.0, 1.0]]), np.array([1.0]))
        assert res.status == "optimal"
        np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-8)

    def test_soft_fallback(self):
        H = np.eye(2)
        g = np.zeros(2)
        C = np.array([[1.0, 0.0], [-1.0, 0.0]])
        d = np.array([-1.0, -1.0])  # x0 <= -1 and x0 >= 1
        res = solve_box_qp(H, g, -np.full(2, 5.0), np.full(2, 5.0), C, d)
        assert res.status == "softened"
        assert res.slack.min() >= -1e-9 and res.slack.sum() > 1.9
        assert np.all(np.abs(res.x) <= 5.0)
