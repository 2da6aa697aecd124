import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from suspended_platform import dynamics as dyn
from suspended_platform.errors import SingularMassMatrixError

from oracles import fd_jacobian, planar_model, symbolic_model

P = dyn.PendulumParams()
X0_RELEASE = np.array([0.15, 0.2, 0.2, 0.0, 0.0, 0, 0, 0, 0, 0])

angles = st.floats(-1.0, 1.0)
vec5 = st.lists(angles, min_size=5, max_size=5).map(np.array)


def random_states(n, seed=0, qmax=1.0, qdmax=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-qmax, qmax, (n, 5)), rng.uniform(-qdmax, qdmax, (n, 5))


def test_mass_matrix_at_rest_is_spd():
    M = dyn.mass_matrix(np.zeros(5), P)
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_matrix_q2_entry_matches_planar_value():
    M = dyn.mass_matrix(np.zeros(5), P)
    expected = (P.m1 + P.m2) * P.L1**2 + P.m2 * P.L2**2 + 2 * P.m2 * P.L1 * P.L2 + P.inertia[1]
    assert M[1, 1] == pytest.approx(expected, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(vec5)
def test_mass_matrix_matches_symbolic_oracle(q):
    M_sym, *_ = symbolic_model()
    expected = np.array(M_sym(q, P.packed), dtype=float)
    np.testing.assert_allclose(dyn.mass_matrix(q, P), expected, atol=1e-12)


def test_yaw_shift_leaves_swing_block_alone_for_symmetric_platform():
    M_sym, *_ = symbolic_model()
    base = dyn.mass_matrix(np.zeros(5), P)
    for delta in (0.3, -1.2, 2.5):
        q = np.array([0, 0, delta, 0, 0])
        M = dyn.mass_matrix(q, P)
        np.testing.assert_allclose(M, np.array(M_sym(q, P.packed), dtype=float), atol=1e-12)
        # Ixx == Iyy so the conjugation by Rz(delta) is the identity on this block
        np.testing.assert_allclose(M[:2, :2], base[:2, :2], atol=1e-12)

    asym = dyn.PendulumParams(inertia=(0.05, 0.09, 0.07))
    q = np.array([0, 0, 0.7, 0, 0])
    np.testing.assert_allclose(
        dyn.mass_matrix(q, asym), np.array(M_sym(q, asym.packed), dtype=float), atol=1e-12
    )


def test_mass_matrix_pd_on_random_draws():
    q, _ = random_states(1000, seed=1)
    ev = np.linalg.eigvalsh(dyn.mass_matrix(q, P))
    assert ev[:, 0].min() > 0


def test_coriolis_vanishes_at_zero_rate():
    q, _ = random_states(5, seed=2)
    C = dyn.coriolis_matrix(q, np.zeros_like(q), P)
    assert np.abs(C).max() == 0.0


def test_skew_symmetry_of_mdot_minus_2c():
    q, qd = random_states(1000, seed=3)
    rng = np.random.default_rng(4)
    v = rng.normal(size=(1000, 5))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # five-point central stencil along the trajectory direction
    h = 1e-3
    Mdot = (
        -dyn.mass_matrix(q + 2 * h * qd, P)
        + 8 * dyn.mass_matrix(q + h * qd, P)
        - 8 * dyn.mass_matrix(q - h * qd, P)
        + dyn.mass_matrix(q - 2 * h * qd, P)
    ) / (12 * h)
    C = dyn.coriolis_matrix(q, qd, P)
    quad = np.einsum("ni,nij,nj->n", v, Mdot - 2 * C, v)
    assert np.abs(quad).max() < 1e-9


def test_christoffel_and_newton_euler_bias_agree():
    q, qd = random_states(200, seed=5, qdmax=2.0)
    C = dyn.coriolis_matrix(q, qd, P)
    h = dyn.chain_terms(q, qd, P).h
    np.testing.assert_allclose(np.einsum("nij,nj->ni", C, qd), h, atol=1e-12)


@pytest.mark.parametrize("q2,q5,w2,w5", [(0.3, -0.2, 1.0, 0.5), (-0.7, 0.4, -0.3, 2.0), (1.1, 0.9, 0.8, -1.4)])
def test_planar_swing_matches_lagrangian(q2, q5, w2, w5):
    M_pl, h_pl, g_pl = planar_model()
    q = np.array([0, q2, 0, 0, q5])
    qd = np.array([0, w2, 0, 0, w5])
    idx = [1, 4]
    M = dyn.mass_matrix(q, P)
    np.testing.assert_allclose(M[np.ix_(idx, idx)], np.array(M_pl(q2, q5, P.packed), dtype=float), atol=1e-12)
    Cqd = dyn.coriolis_matrix(q, qd, P) @ qd
    np.testing.assert_allclose(Cqd[idx], np.array(h_pl(q2, q5, w2, w5, P.packed), dtype=float), atol=1e-12)
    # out-of-plane coordinates see no Coriolis force in a planar swing
    np.testing.assert_allclose(Cqd[[0, 2, 3]], 0.0, atol=1e-12)
    g = dyn.gravity_vector(q, P)
    np.testing.assert_allclose(g[idx], np.array(g_pl(q2, q5, P.packed), dtype=float), atol=1e-12)


def test_gravity_zero_at_rest():
    np.testing.assert_array_equal(dyn.gravity_vector(np.zeros(5), P), np.zeros(5))


def test_gravity_at_horizontal_first_link():
    g = dyn.gravity_vector(np.array([0, np.pi / 2, 0, 0, 0]), P)
    expected = (P.m1 + P.m2) * P.g0 * P.L1 + P.m2 * P.g0 * P.L2
    # positive generalized gravity force means the restoring torque -g pulls q2 back
    assert g[1] == pytest.approx(expected, rel=1e-12)


def test_gravity_is_gradient_of_potential():
    q, _ = random_states(1000, seed=6)
    h = 1e-5
    grad = np.empty_like(q)
    for k in range(5):
        e = np.zeros(5)
        e[k] = h
        grad[:, k] = (dyn.potential_energy(q + e, P) - dyn.potential_energy(q - e, P)) / (2 * h)
    g = dyn.gravity_vector(q, P)
    scale = np.maximum(np.linalg.norm(g, axis=1), 1.0)
    assert (np.linalg.norm(g - grad, axis=1) / scale).max() < 1e-6


def test_potential_matches_symbolic_oracle():
    _, V_sym, p_sym, R_sym = symbolic_model()
    q, _ = random_states(20, seed=7)
    for qi in q:
        assert dyn.potential_energy(qi, P) == pytest.approx(V_sym(qi, P.packed) + P.potential_offset(), abs=1e-12)
        pose = dyn.forward_kinematics(dyn.JointState(qi), P)
        np.testing.assert_allclose(pose.p, np.array(p_sym(qi, P.packed), dtype=float).ravel(), atol=1e-13)
        np.testing.assert_allclose(pose.R, np.array(R_sym(qi), dtype=float), atol=1e-13)


def test_forward_kinematics_hanging():
    pose = dyn.forward_kinematics(dyn.JointState(np.zeros(5)), P)
    np.testing.assert_allclose(pose.p, [0, 0, -(P.L1 + P.L2)])
    np.testing.assert_allclose(pose.R, np.eye(3))
    np.testing.assert_allclose(pose.euler, 0.0)


def test_forward_kinematics_pure_yaw():
    pose = dyn.forward_kinematics(dyn.JointState([0, 0, np.pi / 2, 0, 0]), P)
    np.testing.assert_allclose(pose.p, [0, 0, -(P.L1 + P.L2)], atol=1e-15)
    assert pose.euler[2] == pytest.approx(np.pi / 2)


def test_forward_kinematics_horizontal_first_link():
    # Ry(+pi/2) carries the hanging direction -z onto -x
    pose = dyn.forward_kinematics(dyn.JointState([0, np.pi / 2, 0, 0, 0]), P)
    np.testing.assert_allclose(pose.p, [-(P.L1 + P.L2), 0, 0], atol=1e-15)


def test_pose_invariants_on_random_states():
    q, qd = random_states(50, seed=8, qmax=1.3)
    for qi, qdi in zip(q, qd):
        pose = dyn.forward_kinematics(dyn.JointState(qi, qdi), P)
        np.testing.assert_allclose(pose.R.T @ pose.R, np.eye(3), atol=1e-10)
        assert np.linalg.det(pose.R) == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(dyn.rot_zyx(pose.euler), pose.R, atol=1e-10)


def test_body_jacobian_columns_at_rest():
    J = dyn.body_jacobian(np.zeros(5), P)
    np.testing.assert_allclose(J[3:, 2], [0, 0, 1])
    np.testing.assert_allclose(J[:3, 2], 0.0)
    assert abs(J[0, 4]) == pytest.approx(P.L2)
    np.testing.assert_allclose(J[1:3, 4], 0.0)


def test_body_jacobian_matches_kinematic_finite_differences():
    q, qd = random_states(200, seed=9)
    h = 1e-6
    worst = 0.0
    for qi, qdi in zip(q, qd):
        pp = dyn.forward_kinematics(dyn.JointState(qi + h * qdi), P)
        pm = dyn.forward_kinematics(dyn.JointState(qi - h * qdi), P)
        R = dyn.forward_kinematics(dyn.JointState(qi), P).R
        v_body = R.T @ (pp.p - pm.p) / (2 * h)
        S = R.T @ (pp.R - pm.R) / (2 * h)
        w_body = np.array([S[2, 1], S[0, 2], S[1, 0]])
        twist = dyn.body_jacobian(qi, P) @ qdi
        worst = max(worst, np.abs(twist - np.concatenate([v_body, w_body])).max())
    assert worst < 1e-8


def test_forward_kinematics_velocity_consistent_with_body_jacobian():
    q, qd = random_states(20, seed=10)
    for qi, qdi in zip(q, qd):
        pose = dyn.forward_kinematics(dyn.JointState(qi, qdi), P)
        twist = dyn.body_jacobian(qi, P) @ qdi
        np.testing.assert_allclose(pose.R.T @ pose.v, twist[:3], atol=1e-12)
        np.testing.assert_allclose(pose.omega, twist[3:], atol=1e-12)


def test_state_derivative_equilibrium():
    np.testing.assert_array_equal(dyn.state_derivative(np.zeros(10), dyn.BodyWrench.zero(), P), np.zeros(10))


def test_pure_yaw_moment_at_origin_only_drives_q3():
    Mz = 0.37
    xd = dyn.state_derivative(np.zeros(10), dyn.BodyWrench([0, 0, 0], [0, 0, Mz]), P)
    M = dyn.mass_matrix(np.zeros(5), P)
    expected = np.zeros(10)
    expected[7] = Mz / M[2, 2]
    np.testing.assert_allclose(xd, expected, atol=1e-15)


def test_free_flow_conserves_energy_instantaneously():
    q, qd = random_states(100, seed=11, qdmax=2.0)
    x = np.concatenate([q, qd], axis=1)
    xd = dyn.state_derivative(x, None, P)
    h = 1e-6
    dE = (dyn.total_energy(x + h * xd, P) - dyn.total_energy(x - h * xd, P)) / (2 * h)
    assert np.abs(dE).max() < 1e-7


def test_joint_torque_injection_matches_wrench_route():
    rng = np.random.default_rng(12)
    q, qd = random_states(10, seed=12)
    for qi, qdi in zip(q, qd):
        u = rng.normal(size=6)
        tau = dyn.body_jacobian(qi, P).T @ u
        x = np.concatenate([qi, qdi])
        np.testing.assert_allclose(
            dyn.state_derivative(x, u, P), dyn.state_derivative(x, None, P, tau=tau), atol=1e-12
        )


def test_singular_mass_matrix_is_reported():
    # first-joint x and z axes align at q2 = pi/2 and the platform inertia
    # cannot make up for it when it is negligible
    tiny = dyn.PendulumParams(inertia=(1e-14, 1e-14, 1e-14))
    with pytest.raises(SingularMassMatrixError):
        dyn.state_derivative(np.array([0, np.pi / 2, 0, 0, 0, 0, 0, 0, 0, 0]), None, tiny)


def test_linearize_structure_at_origin():
    A, B = dyn.linearize(np.zeros(10), None, P)
    np.testing.assert_array_equal(A[:5, :5], 0.0)
    np.testing.assert_array_equal(A[:5, 5:], np.eye(5))
    np.testing.assert_allclose(A[5:, 5:], 0.0, atol=1e-14)
    M = dyn.mass_matrix(np.zeros(5), P)
    dg = fd_jacobian(lambda q: dyn.gravity_vector(q, P), np.zeros(5))
    np.testing.assert_allclose(A[5:, :5], -np.linalg.solve(M, dg), atol=1e-8)
    assert B.shape == (10, 6)


def test_linearize_matches_finite_differences():
    rng = np.random.default_rng(13)
    points = [np.zeros(10)] + [np.concatenate(random_states(1, seed=s)).ravel() for s in range(14, 18)]
    for x0 in points:
        u0 = rng.normal(size=6)
        A, B = dyn.linearize(x0, u0, P)
        A_fd = fd_jacobian(lambda x: dyn.state_derivative(x, u0, P), x0)
        B_fd = fd_jacobian(lambda u: dyn.state_derivative(x0, u, P), u0)
        assert np.abs(A - A_fd).max() / max(1.0, np.abs(A).max()) < 1e-6
        assert np.abs(B - B_fd).max() / max(1.0, np.abs(B).max()) < 1e-6


def test_linearize_selector_columns():
    sel = np.zeros((6, 3))
    sel[[0, 1, 5], [0, 1, 2]] = 1
    _, B_full = dyn.linearize(np.zeros(10), None, P)
    _, B = dyn.linearize(np.zeros(10), None, P, selector=sel)
    np.testing.assert_array_equal(B, B_full[:, [0, 1, 5]])


def test_origin_modes_are_oscillatory():
    A, _ = dyn.linearize(np.zeros(10), None, P)
    ev = np.linalg.eigvals(A)
    assert np.abs(ev.real).max() < 1e-10
    freqs = np.unique(np.round(np.abs(ev.imag), 6))
    # free yaw (double zero) plus a slow and a fast swing mode, each in two planes
    assert len(freqs) == 3
    assert freqs[0] == 0.0
    counts = [np.sum(np.isclose(np.abs(ev.imag), f, atol=1e-6)) for f in freqs[1:]]
    assert counts == [4, 4]


def test_rk4_equilibrium_fixed_point():
    np.testing.assert_array_equal(dyn.step_rk4(np.zeros(10), None, 0.01, P), np.zeros(10))


def test_rk4_is_fourth_order():
    def run(dt, T=1.0):
        x = X0_RELEASE.copy()
        for _ in range(int(round(T / dt))):
            x = dyn.step_rk4(x, None, dt, P)
        return x

    ref = run(0.001)
    e1 = np.linalg.norm(run(0.01) - ref)
    e2 = np.linalg.norm(run(0.005) - ref)
    assert 12 < e1 / e2 < 20


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        dyn.step_rk4(np.zeros(10), None, 0.0, P)


def test_total_energy_reference_points():
    assert dyn.total_energy(np.zeros(10), P) == 0.0
    x = np.zeros(10)
    x[1] = np.pi
    expected = 2 * P.g0 * (P.m1 * P.L1 + P.m2 * (P.L1 + P.L2))
    assert dyn.total_energy(x, P) == pytest.approx(expected, rel=1e-14)


def _energy_trajectory(x0, T, dt):
    x = x0.copy()
    E = [dyn.total_energy(x, P)]
    for _ in range(int(round(T / dt))):
        x = dyn.step_rk4(x, None, dt, P)
        E.append(dyn.total_energy(x, P))
    return np.array(E)


def test_free_swing_energy_drift_10s():
    E = _energy_trajectory(X0_RELEASE, 10.0, 1e-3)
    assert np.abs(E - E[0]).max() / E[0] < 1e-6


def test_yaw_symmetry_of_energy_trajectory():
    E_ref = _energy_trajectory(X0_RELEASE, 2.0, 2e-3)
    q = X0_RELEASE[:5]
    R1 = Rotation.from_euler("XYZ", q[:3]).as_matrix()
    for alpha in (0.4, -1.1):
        R1_rot = Rotation.from_euler("z", alpha).as_matrix() @ R1
        q_rot = np.concatenate([Rotation.from_matrix(R1_rot).as_euler("XYZ"), q[3:]])
        x_rot = np.concatenate([q_rot, np.zeros(5)])
        E_rot = _energy_trajectory(x_rot, 2.0, 2e-3)
        np.testing.assert_allclose(E_rot, E_ref, rtol=0, atol=1e-9 * E_ref[0])


def test_batched_and_single_evaluation_agree():
    q, qd = random_states(7, seed=20)
    x = np.concatenate([q, qd], axis=1)
    batched = dyn.state_derivative(x, None, P)
    for i in range(7):
        np.testing.assert_array_equal(batched[i], dyn.state_derivative(x[i], None, P))
