import logging
import math

import numpy as np
import pytest
from scipy.linalg import expm

from app.core.exceptions import NoConvergence, NonFiniteState
from app.core.machine_model import (OMEGA_BASE, GeneratorModel, GeneratorState, MachineParams, ModelNoiseSettings,
                                    dq_power, electrical_power, measurement, measurement_noise_R, power_partials,
                                    process_noise_Q, reactive_power, rk4_step, solve_equilibrium, state_derivative,
                                    stator_currents, transition)


def _params(**overrides):
    base = dict(T_J=12.8, D=10.0, T_d0p=6.0, T_q0p=0.535, X_d=0.8958, X_q=0.8645, X_dp=0.1198, X_qp=0.1969)
    base.update(overrides)
    return MachineParams(**base)


# Parameters and typed values

def test_params_validation():
    with pytest.raises(ValueError):
        _params(T_J=0.0)
    with pytest.raises(ValueError):
        _params(D=-1.0)
    with pytest.raises(ValueError):
        _params(X_dp=1.0)  # X_d < X_dp
    with pytest.raises(ValueError):
        _params(X_qp=float("nan"))
    _params(D=0.0)


def test_params_from_dict_requires_exact_keys(params):
    data = params.to_dict()
    assert MachineParams.from_dict(data) == params
    with pytest.raises(ValueError):
        MachineParams.from_dict({k: v for k, v in data.items() if k != "X_q"})
    with pytest.raises(ValueError):
        MachineParams.from_dict({**data, "H": 6.4})


def test_params_save_and_load(tmp_path, params):
    path = str(tmp_path / "machine.json")
    params.save(path)
    assert MachineParams.load(path) == params


def test_state_outside_plausibility_band_warns(caplog):
    with caplog.at_level(logging.WARNING):
        GeneratorState(delta=0.1, omega=1.6, E_dp=0.0, E_qp=1.0)
    assert "plausibility" in caplog.text
    with pytest.raises(ValueError):
        GeneratorState(delta=float("inf"), omega=1.0, E_dp=0.0, E_qp=1.0)


def test_state_array_conversion():
    x = GeneratorState(0.5, 1.0, 0.1, 1.1)
    np.testing.assert_array_equal(np.asarray(x), [0.5, 1.0, 0.1, 1.1])
    assert GeneratorState.from_array([0.5, 1.0, 0.1, 1.1]) == x


# Algebraic relations

def test_stator_currents_vanish_at_no_load(params):
    I_d, I_q = stator_currents([0.3, 1.0, 0.0, 1.05], [0.0, 0.0, 1.05, 0.3], params)
    assert abs(I_d) < 1e-15 and abs(I_q) < 1e-15


def test_stator_current_hand_value():
    p = _params(X_dp=0.2)
    I_d, _ = stator_currents([0.0, 1.0, 0.0, 1.2], [0.0, 0.0, 1.0, 0.0], p)
    assert I_d == pytest.approx(1.0, abs=1e-14)


def test_round_rotor_quadrature_power():
    p = _params(X_dp=0.2, X_qp=0.2)
    P = electrical_power([math.pi / 2, 1.0, 0.0, 1.1], [0.0, 0.0, 1.02, 0.0], p)
    assert P == pytest.approx(1.02 * 1.1 / 0.2, rel=1e-14)


def test_power_zero_when_aligned(params):
    assert electrical_power([0.4, 1.0, 0.0, 1.1], [0.0, 0.0, 1.0, 0.4], params) == pytest.approx(0.0, abs=1e-15)


def test_closed_form_power_matches_dq_form():
    rng = np.random.default_rng(11)
    for _ in range(200):
        X_dp = rng.uniform(0.05, 0.5)
        X_qp = rng.uniform(0.05, 0.8)
        p = _params(X_dp=X_dp, X_qp=X_qp, X_d=X_dp + rng.uniform(0, 1.5), X_q=X_qp + rng.uniform(0, 1.5))
        x = np.column_stack([rng.uniform(-np.pi, np.pi, 50), rng.uniform(0.95, 1.05, 50),
                             rng.uniform(-0.8, 0.8, 50), rng.uniform(0.5, 1.5, 50)])
        u = np.column_stack([np.zeros(50), np.zeros(50), rng.uniform(0.6, 1.2, 50), rng.uniform(-np.pi, np.pi, 50)])
        np.testing.assert_allclose(electrical_power(x, u, p), dq_power(x, u, p), rtol=1e-12, atol=1e-12)


def test_power_partials_match_finite_differences(params):
    x = np.array([0.9, 1.0, 0.3, 1.05])
    u = np.array([0.0, 0.0, 1.01, 0.12])
    dP_dU, dP_dphi = power_partials(x, u, params)
    h = 1e-6
    fd_U = (electrical_power(x, u + [0, 0, h, 0], params) - electrical_power(x, u - [0, 0, h, 0], params)) / (2 * h)
    fd_phi = (electrical_power(x, u + [0, 0, 0, h], params) - electrical_power(x, u - [0, 0, 0, h], params)) / (2 * h)
    assert dP_dU == pytest.approx(fd_U, rel=1e-6)
    assert dP_dphi == pytest.approx(fd_phi, rel=1e-6)


# Dynamics

def test_speed_deviation_drives_angle(params):
    I_d, I_q = stator_currents([0.0, 1.001, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], params)
    assert I_d == 0.0 and I_q == 0.0
    dx = state_derivative([0.0, 1.001, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0], params)
    assert dx[0] == pytest.approx(0.001 * OMEGA_BASE, rel=1e-12)


def test_derivative_vanishes_at_equilibrium(params, equilibrium):
    x0, u = equilibrium
    assert np.max(np.abs(state_derivative(x0, u, params))) < 1e-10


def test_state_derivative_broadcasts_over_points(params, equilibrium):
    x0, u = equilibrium
    points = np.vstack([x0, x0 + 0.01, x0 - 0.01])
    batched = state_derivative(points, u, params)
    assert batched.shape == (3, 4)
    for row, point in zip(batched, points):
        np.testing.assert_array_equal(row, state_derivative(point, u, params))


def test_rk4_matches_matrix_exponential_on_linear_system():
    A = np.array([[0.0, 1.0], [-4.0, -0.4]])
    x = np.array([1.0, 0.0])
    h = 0.02
    exact = expm(A * h) @ x
    np.testing.assert_allclose(rk4_step(lambda v: A @ v, x, h), exact, atol=1e-9)


def test_rk4_fourth_order_under_halving(params, equilibrium):
    x0, u = equilibrium
    start = x0 + np.array([0.0, 0.002, 0.0, 0.0])

    def integrate(h):
        x = start.copy()
        for _ in range(int(round(1.0 / h))):
            x = transition(x, u, params, h)
        return x

    coarse, mid, fine = integrate(0.02), integrate(0.01), integrate(0.005)
    ratio = np.linalg.norm(coarse - mid) / np.linalg.norm(mid - fine)
    assert 10.0 < ratio < 22.0


def test_transition_holds_equilibrium(params, equilibrium):
    x0, u = equilibrium
    x = x0.copy()
    for _ in range(int(20.0 / 0.02)):
        x = transition(x, u, params)
    assert np.max(np.abs(x - x0)) < 1e-8


def test_transition_is_periodic_in_angles(params, equilibrium):
    x0, u = equilibrium
    x = x0 + np.array([0.05, 0.001, 0.0, 0.0])
    shifted = transition(x + [2 * np.pi, 0, 0, 0], u + [0, 0, 0, 2 * np.pi], params)
    np.testing.assert_allclose(shifted - [2 * np.pi, 0, 0, 0], transition(x, u, params), atol=1e-9)


def test_transition_rejects_bad_step_and_non_finite(params, equilibrium):
    x0, u = equilibrium
    with pytest.raises(ValueError):
        transition(x0, u, params, 0.0)
    with pytest.raises(NonFiniteState):
        transition(x0 + [0, 0, np.inf, 0], u, params)


# Measurement and noise

def test_measurement_passes_through_angle_and_speed(params):
    x = np.array([0.812345, 1.0012345, 0.2, 1.1])
    u = np.array([0.0, 0.0, 1.0, 0.1])
    z = measurement(x, u, params)
    assert z[0] == x[0] and z[1] == x[1]
    assert z[2] == electrical_power(x, u, params)


def test_measurement_noise_entries(params):
    x = np.array([0.8, 1.0, 0.2, 1.1])
    u = np.array([0.0, 0.0, 1.0, 0.1])
    R = measurement_noise_R(x, u, params)
    assert R[0, 0] == pytest.approx(math.radians(2.0) ** 2, rel=1e-15)
    assert R[1, 1] == 1e-6
    assert R[2, 2] > 0
    assert np.count_nonzero(R - np.diag(np.diag(R))) == 0
    assert measurement_noise_R(x, u, params, sigma_Ut=0.0, sigma_phi=0.0)[2, 2] == 0.0


def test_process_noise_zero_sigmas(params, equilibrium):
    x0, u = equilibrium
    np.testing.assert_array_equal(process_noise_Q(x0, u, params, sigma_Ut=0.0, sigma_phi=0.0), np.zeros((4, 4)))


def test_process_noise_shrinks_with_step(params, equilibrium):
    x0, u = equilibrium
    assert np.trace(process_noise_Q(x0, u, params, h=1e-5)) < 1e-6 * np.trace(process_noise_Q(x0, u, params))


def test_process_noise_dual_stencil_agreement(params, equilibrium):
    x0, u = equilibrium
    x = x0 + np.array([0.05, 0.001, 0.01, -0.01])
    fine = process_noise_Q(x, u, params, stencil=1e-6)
    wide = process_noise_Q(x, u, params, stencil=1e-4)
    assert np.all(np.diag(fine) >= 0)
    np.testing.assert_allclose(np.diag(fine), np.diag(wide), rtol=1e-4, atol=1e-14 * np.max(np.diag(fine)))


def test_generator_model_floors_power_variance(params):
    model = GeneratorModel(params, noise=ModelNoiseSettings(sigma_Ut=0.0, sigma_phi_deg=0.0, pe_var_floor=1e-12))
    R = model.measurement_noise(np.array([0.8, 1.0, 0.2, 1.1]), np.array([0.0, 0.0, 1.0, 0.1]))
    assert R[2, 2] == 1e-12


# Equilibrium

def test_no_load_equilibrium(params):
    x0, T_m, E_f = solve_equilibrium([0.0, 0.0, 1.0, 0.3], params, P_target=0.0)
    assert x0.delta == pytest.approx(0.3, abs=1e-12)
    assert x0.omega == 1.0
    assert x0.E_dp == pytest.approx(0.0, abs=1e-12)
    assert x0.E_qp == pytest.approx(1.0, abs=1e-12)
    assert T_m == pytest.approx(0.0, abs=1e-12)
    assert E_f == pytest.approx(1.0, abs=1e-12)


def test_loaded_equilibrium_hits_targets(params):
    x0, T_m, E_f = solve_equilibrium([0.0, 0.0, 1.0, 0.0], params, P_target=0.8, Q_target=0.2)
    u = np.array([T_m, E_f, 1.0, 0.0])
    x = np.asarray(x0)
    assert electrical_power(x, u, params) == pytest.approx(0.8, abs=1e-10)
    assert reactive_power(x, u, params) == pytest.approx(0.2, abs=1e-10)
    assert T_m == pytest.approx(0.8, abs=1e-10)
    held = x.copy()
    for _ in range(int(10.0 / 0.02)):
        held = transition(held, u, params)
    assert np.max(np.abs(held - x)) < 1e-8


def test_equilibrium_rejects_invalid_phasor(params):
    with pytest.raises(NoConvergence):
        solve_equilibrium([0.0, 0.0, 0.0, 0.0], params, P_target=0.5)
