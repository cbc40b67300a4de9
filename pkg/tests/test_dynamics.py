import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pampc.dynamics import (
    FullModel,
    QuadParams,
    QuadState,
    ReducedModel,
    continuous_dynamics,
    hover_state,
    linearize,
    rk4_step,
    thrust_torque_map,
)
from pampc.geometry import UnitQuaternion

from oracles import richardson, rk4_order_slope

G = 9.81


def mixing_oracle(c, dx, dy, ct):
    # rotor layout written out entry by entry
    M = np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [-dx[0], -dx[1], dx[2], dx[3]],
            [dy[0], -dy[1], -dy[2], dy[3]],
            [-ct, ct, -ct, ct],
        ]
    )
    return M @ c


class TestThrustTorque:
    def test_symmetric_hover(self):
        p = QuadParams(d_x=np.full(4, 0.1), d_y=np.full(4, 0.1))
        c, tau = thrust_torque_map([2.0] * 4, p)
        assert c == 8.0
        np.testing.assert_allclose(tau, 0.0, atol=1e-15)

    def test_first_rotor_signs(self):
        p = QuadParams(d_x=[0.1, 0.2, 0.2, 0.2], d_y=[0.1, 0.2, 0.2, 0.2], c_tau=0.01)
        c, tau = thrust_torque_map([1.0, 0, 0, 0], p)
        assert c == 1.0
        np.testing.assert_allclose(tau, [-0.1, 0.1, -0.01], atol=1e-15)

    def test_random_against_matrix_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            dx, dy = rng.uniform(0.05, 0.3, size=(2, 4))
            ct = rng.uniform(0.001, 0.05)
            p = QuadParams(d_x=dx, d_y=dy, c_tau=ct)
            thr = rng.uniform(0, 5, size=4)
            c, tau = thrust_torque_map(thr, p)
            np.testing.assert_allclose(np.r_[c, tau], mixing_oracle(thr, dx, dy, ct), atol=1e-12)

    def test_negative_thrust_rejected(self):
        with pytest.raises(ValueError):
            thrust_torque_map([1.0, -0.1, 1.0, 1.0], QuadParams())

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(0, 5), min_size=4, max_size=4),
        st.lists(st.floats(0, 5), min_size=4, max_size=4),
        st.floats(0, 3),
        st.floats(0, 3),
    )
    def test_linear(self, c1, c2, a, b):
        p = QuadParams()
        lhs = np.r_[thrust_torque_map(a * np.array(c1) + b * np.array(c2), p)[0],
                    thrust_torque_map(a * np.array(c1) + b * np.array(c2), p)[1]]  # fmt: skip
        m1 = np.r_[thrust_torque_map(c1, p)[0], thrust_torque_map(c1, p)[1]]
        m2 = np.r_[thrust_torque_map(c2, p)[0], thrust_torque_map(c2, p)[1]]
        np.testing.assert_allclose(lhs, a * m1 + b * m2, atol=1e-12)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            QuadParams(mass=0.0)
        with pytest.raises(ValueError):
            QuadParams(inertia=[0.1, 0.0, 0.1])
        with pytest.raises(ValueError):
            QuadParams(c_min=5.0, c_max=1.0)

    def test_file_round_trip(self, tmp_path):
        p = QuadParams(mass=1.1, inertia=[0.01, 0.02, 0.03], c_tau=0.03)
        path = tmp_path / "quad.ini"
        path.write_text("[quad]\n" + "".join(f"{k} = {v}\n" for k, v in p.to_mapping().items()))
        q = QuadParams.from_file(path)
        assert q.mass == 1.1 and q.c_tau == 0.03
        np.testing.assert_array_equal(q.inertia, p.inertia)
        np.testing.assert_array_equal(q.d_x, p.d_x)

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            QuadParams.from_mapping({"wingspan": "2"})

    def test_state_vectors(self):
        s = QuadState(p=np.array([1.0, 2, 3]))
        assert s.full().shape == (13,) and s.reduced().shape == (10,)
        np.testing.assert_array_equal(QuadState.from_vector(s.full()).p, [1, 2, 3])


class TestContinuous:
    @pytest.mark.parametrize("model", [ReducedModel(), FullModel()], ids=["reduced", "full"])
    def test_hover_equilibrium(self, model):
        xd = continuous_dynamics(model, hover_state(model, (1, 2, 3), 0.4), model.hover_input())
        np.testing.assert_allclose(xd, 0.0, atol=1e-12)

    def test_free_fall(self):
        m = ReducedModel()
        xd = continuous_dynamics(m, hover_state(m), [0.0, 0, 0, 0])
        np.testing.assert_allclose(xd[7:10], [0, 0, -G], atol=1e-15)

    def test_tilted_thrust_matches_matrix_oracle(self):
        m = ReducedModel()
        x = hover_state(m)
        x[3:7] = UnitQuaternion.from_axis_angle([1, 0, 0], math.pi / 4).as_array()
        c = m.params.hover_thrust
        xd = continuous_dynamics(m, x, [c, 0, 0, 0])
        s, co = math.sin(math.pi / 4), math.cos(math.pi / 4)
        R = np.array([[1, 0, 0], [0, co, -s], [0, s, co]])
        expected = R @ [0, 0, c] / m.params.mass + [0, 0, -G]
        np.testing.assert_allclose(xd[7:10], expected, atol=1e-12)
        assert abs(xd[8]) == pytest.approx(G * math.sin(math.pi / 4), abs=1e-12)

    def test_non_finite_rejected(self):
        m = ReducedModel()
        x = hover_state(m)
        x[0] = np.nan
        with pytest.raises(ValueError):
            continuous_dynamics(m, x, m.hover_input())

    def test_gyroscopic_term(self):
        m = FullModel()
        x = hover_state(m)
        x[10:13] = [1.0, 2.0, 0.5]
        J = m.params.inertia
        om = x[10:13]
        xd = continuous_dynamics(m, x, m.hover_input())
        np.testing.assert_allclose(xd[10:13], -np.cross(om, J * om) / J, atol=1e-12)


class TestRk4:
    @pytest.mark.parametrize("model", [ReducedModel(), FullModel()], ids=["reduced", "full"])
    def test_hover_unchanged(self, model):
        x = hover_state(model, (0.5, -1, 2), 0.3)
        np.testing.assert_allclose(rk4_step(model, x, model.hover_input(), 0.05), x, atol=1e-12)

    def test_ballistic(self):
        m = ReducedModel()
        x = rk4_step(m, hover_state(m), [0.0, 0, 0, 0], 0.1)
        assert x[9] == pytest.approx(-0.981, abs=1e-12)
        # 1/2 g t^2 at t = 0.1 s
        assert x[2] == pytest.approx(-0.5 * G * 0.01, abs=1e-12)

    def test_spin_against_quaternion_exponential(self):
        m = FullModel()
        x = hover_state(m)
        x[10:13] = [0, 0, math.pi]
        u = np.zeros(4)  # no torque; rate about a principal axis stays constant
        for _ in range(100):
            x = rk4_step(m, x, u, 0.01)
        expected = np.array([math.cos(math.pi / 2), 0, 0, math.sin(math.pi / 2)])
        assert min(np.linalg.norm(x[3:7] - expected), np.linalg.norm(x[3:7] + expected)) < 1e-4
        yaw = 2 * math.atan2(x[6], x[3])
        assert abs(abs(yaw) - math.pi) < 1e-4

    def test_single_step_spin_phase(self):
        # one RK4 step of q' = 1/2 Lambda q is the degree-4 Taylor polynomial of the exponential
        m = FullModel()
        x = hover_state(m)
        x[10:13] = [0, 0, math.pi]
        q = rk4_step(m, x, np.zeros(4), 1.0)[3:7]
        z = 1j * math.pi / 2
        poly = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
        poly /= abs(poly)
        np.testing.assert_allclose([q[0], q[3]], [poly.real, poly.imag], atol=1e-12)

    def test_dt_must_be_positive(self):
        m = ReducedModel()
        with pytest.raises(ValueError):
            rk4_step(m, hover_state(m), m.hover_input(), 0.0)

    def test_quaternion_drift(self):
        m = FullModel()
        rng = np.random.default_rng(1)
        x = hover_state(m)
        x[10:13] = [3.0, -2.0, 4.0]
        for _ in range(200):
            x = rk4_step(m, x, rng.uniform(0, 4, size=4), 0.05)
            assert abs(np.linalg.norm(x[3:7]) - 1.0) < 1e-9

    def test_energy_conserved_without_thrust(self):
        m = FullModel()
        x = hover_state(m)
        x[7:10] = [2.0, -1.0, 5.0]
        x[10:13] = [1.0, 0.5, -0.3]
        mass, g = m.params.mass, G

        def energy(x):
            return 0.5 * mass * x[7:10] @ x[7:10] + mass * g * x[2]

        e0 = energy(x)
        for _ in range(20):
            x = rk4_step(m, x, np.zeros(4), 0.05)
        assert abs(energy(x) - e0) <= 1e-6 * abs(e0)

    def test_order(self):
        assert 3.7 <= rk4_order_slope() <= 4.3


class TestLinearize:
    def test_double_integrator_block_at_hover(self):
        m = ReducedModel()
        dt = 0.05
        _, A, _ = linearize(m, hover_state(m), m.hover_input(), dt)
        np.testing.assert_allclose(A[0:3, 7:10], dt * np.eye(3), atol=1e-9)
        np.testing.assert_allclose(A[0:3, 0:3], np.eye(3), atol=1e-9)
        np.testing.assert_allclose(A[7:10, 7:10], np.eye(3), atol=1e-9)

    @pytest.mark.parametrize("model", [ReducedModel(), FullModel()], ids=["reduced", "full"])
    def test_random_against_finite_differences(self, model):
        rng = np.random.default_rng(2)
        dt = 0.05
        for _ in range(10):
            x = hover_state(model, rng.normal(size=3), rng.uniform(-1, 1))
            x[3:7] = UnitQuaternion.from_array(rng.normal(size=4)).as_array()
            x[7:10] = rng.normal(size=3)
            if model.nx == 13:
                x[10:13] = rng.normal(size=3)
                u = rng.uniform(0.5, 5, size=4)
            else:
                u = np.r_[rng.uniform(2, 15), rng.normal(size=3)]
            xn, A, B = linearize(model, x, u, dt)
            np.testing.assert_allclose(xn, rk4_step(model, x, u, dt), atol=1e-14)
            fa = richardson(lambda z: rk4_step(model, z, u, dt), x)
            fb = richardson(lambda z: rk4_step(model, x, z, dt), u)
            for got, ref in ((A, fa), (B, fb)):
                scale = np.maximum(np.maximum(np.abs(got), np.abs(ref)), 1e-6 * np.abs(ref).max())
                assert np.max(np.abs(got - ref) / scale) < 1e-4

    def test_rate_inputs_only_move_attitude_at_first_order(self):
        m = ReducedModel()
        dt = 0.05
        x = hover_state(m)
        _, _, B = linearize(m, x, m.hover_input(), dt)
        fb = richardson(lambda z: rk4_step(m, x, z, dt), m.hover_input())
        # omega columns: attitude rows O(dt), velocity O(g dt^2), position O(g dt^3)
        assert np.abs(B[3:7, 1:4]).max() == pytest.approx(dt / 2, rel=1e-3)
        assert np.abs(B[7:10, 1:4]).max() == pytest.approx(G * dt**2 / 2, rel=1e-2)
        assert np.abs(B[0:3, 1:4]).max() == pytest.approx(G * dt**3 / 6, rel=1e-2)
        np.testing.assert_allclose(B, fb, atol=1e-9)

    def test_batched_matches_single(self):
        m = FullModel()
        rng = np.random.default_rng(3)
        X = np.tile(hover_state(m), (5, 1))
        X[:, 10:13] = rng.normal(size=(5, 3))
        U = rng.uniform(1, 4, size=(5, 4))
        _, A, B = linearize(m, X, U, 0.02)
        for i in range(5):
            _, Ai, Bi = linearize(m, X[i], U[i], 0.02)
            np.testing.assert_allclose(A[i], Ai, atol=1e-15)
            np.testing.assert_allclose(B[i], Bi, atol=1e-15)
