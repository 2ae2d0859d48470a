import numpy as np
import pytest

from app.core.cubature_filter import (FilterBelief, Frame, cubature_points, measurement_moments, predict, run_filter,
                                      update)
from app.core.exceptions import FilterStepError, NotPositiveDefinite
from app.core.machine_model import GeneratorModel
from tests.linear_model import LinearModel, random_linear_model


def _kalman(model, x, P, frames):
    """Textbook Kalman filter, written out independently."""
    means, covs = [], []
    for frame in frames:
        x = model.A @ x
        P = model.A @ P @ model.A.T + model.Q
        S = model.H @ P @ model.H.T + model.R
        K = P @ model.H.T @ np.linalg.inv(S)
        x = x + K @ (frame.z - model.H @ x)
        P = P - K @ S @ K.T
        means.append(x)
        covs.append(P)
    return np.array(means), np.array(covs)


def test_cubature_points_moments():
    for n in (1, 2, 4, 7):
        points, weights = cubature_points(n)
        assert points.shape == (2 * n, n)
        np.testing.assert_array_equal(weights, np.full(2 * n, 1.0 / (2 * n)))
        np.testing.assert_allclose(weights @ points, np.zeros(n), atol=1e-15)
        np.testing.assert_allclose((points * weights[:, None]).T @ points, np.eye(n), atol=1e-14)
    with pytest.raises(ValueError):
        cubature_points(0)


@pytest.mark.parametrize("m", [1, 2])
def test_matches_kalman_filter_on_linear_gaussian_system(m):
    rng = np.random.default_rng(2024 + m)
    model = random_linear_model(rng, n=2, m=m)
    x_true = np.array([1.0, -0.5])
    frames = []
    for _ in range(100):
        x_true = model.A @ x_true + rng.multivariate_normal(np.zeros(2), model.Q)
        frames.append(Frame(u=np.zeros(1), z=model.H @ x_true + rng.multivariate_normal(np.zeros(m), model.R)))
    initial = FilterBelief(mean=np.zeros(2), cov=np.eye(2))

    beliefs = run_filter(model, initial, frames)
    means, covs = _kalman(model, np.zeros(2), np.eye(2), frames)

    assert len(beliefs) == 100
    assert np.max(np.abs(np.array([b.mean for b in beliefs]) - means)) < 1e-8
    assert np.max(np.abs(np.array([b.cov for b in beliefs]) - covs)) < 1e-8


def test_posterior_covariance_stays_symmetric():
    rng = np.random.default_rng(5)
    model = random_linear_model(rng, n=2, m=2)
    belief = FilterBelief(mean=np.zeros(2), cov=np.eye(2))
    for _ in range(20):
        belief = update(predict(belief, None, model), None, rng.standard_normal(2), model)
        np.testing.assert_array_equal(belief.cov, belief.cov.T)
        assert np.all(np.linalg.eigvalsh(belief.cov) > 0)


def test_step_index_and_diagnostics():
    model = LinearModel(np.eye(2), np.eye(2), 0.01 * np.eye(2), 0.1 * np.eye(2))
    predicted = predict(FilterBelief(np.zeros(2), np.eye(2), step_index=4), None, model)
    assert predicted.step_index == 5
    posterior = update(predicted, None, np.array([1.0, 2.0]), model)
    assert posterior.step_index == 5
    np.testing.assert_allclose(posterior.diagnostics.innovation, [1.0, 2.0])
    np.testing.assert_array_equal(posterior.diagnostics.weights, np.ones(2))


def test_r_override_replaces_model_noise():
    model = LinearModel(np.eye(1), np.eye(1), 0.0 * np.eye(1), np.eye(1))
    predicted = FilterBelief(np.zeros(1), np.eye(1))
    default = update(predicted, None, np.array([1.0]), model)
    inflated = update(predicted, None, np.array([1.0]), model, R_override=np.array([[99.0]]))
    assert default.mean[0] == pytest.approx(0.5)
    assert inflated.mean[0] == pytest.approx(0.01)


def test_measurement_moments_exact_for_linear_measurement():
    model = LinearModel(np.eye(2), np.array([[1.0, 2.0]]), np.zeros((2, 2)), np.array([[0.5]]))
    predicted = FilterBelief(np.array([1.0, 1.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
    moments = measurement_moments(predicted, None, model)
    np.testing.assert_allclose(moments.z_hat, [3.0])
    np.testing.assert_allclose(moments.spread, model.H @ predicted.cov @ model.H.T)
    np.testing.assert_allclose(moments.cross_cov, predicted.cov @ model.H.T)


def test_belief_shape_mismatch():
    with pytest.raises(ValueError):
        FilterBelief(np.zeros(3), np.eye(2))


def test_frame_uses_held_input_for_prediction():
    assert Frame(u=np.ones(4), z=np.zeros(3)).prediction_input[0] == 1.0
    assert Frame(u=np.ones(4), z=np.zeros(3), u_hold=np.zeros(4)).prediction_input[0] == 0.0


def test_failed_step_reports_step_index():
    model = LinearModel(np.eye(1), np.eye(1), np.zeros((1, 1)), -100.0 * np.eye(1))
    frames = [Frame(u=np.zeros(1), z=np.zeros(1))]
    with pytest.raises(FilterStepError) as info:
        run_filter(model, FilterBelief(np.zeros(1), np.eye(1), step_index=6), frames)
    assert info.value.step_index == 7
    assert isinstance(info.value.cause, NotPositiveDefinite)


def test_run_filter_requires_frames():
    model = LinearModel(np.eye(1), np.eye(1), np.zeros((1, 1)), np.eye(1))
    with pytest.raises(ValueError):
        run_filter(model, FilterBelief(np.zeros(1), np.eye(1)), [])


def test_generator_filter_tracks_equilibrium(params, equilibrium):
    x0, u = equilibrium
    model = GeneratorModel(params)
    initial = FilterBelief(x0, np.diag([1e-4, 1e-6, 1e-4, 1e-4]))
    z = model.measurement(x0, u)
    step_times = []
    beliefs = run_filter(model, initial, [Frame(u=u, z=z)] * 50, step_times=step_times)
    assert len(step_times) == 50
    assert np.max(np.abs(beliefs[-1].mean - x0)) < 1e-4
    assert np.all(np.isfinite(beliefs[-1].cov))


class _SquareModel:
    """Scalar x' = x**2 with no process noise."""
    n, m = 1, 1

    def transition(self, x, u):
        return np.asarray(x) ** 2

    def measurement(self, x, u):
        return np.asarray(x)

    def process_noise(self, x, u):
        return np.zeros((1, 1))

    def measurement_noise(self, x, u):
        return np.eye(1)


def test_predict_square_of_standard_normal():
    predicted = predict(FilterBelief(np.zeros(1), np.eye(1)), None, _SquareModel())
    assert predicted.mean[0] == 1.0
    assert predicted.cov[0, 0] == 0.0


def test_update_never_grows_covariance(params, equilibrium):
    rng = np.random.default_rng(11)
    linear = random_linear_model(rng, n=2, m=2)
    belief = FilterBelief(mean=np.zeros(2), cov=np.eye(2))
    for _ in range(20):
        predicted = predict(belief, None, linear)
        belief = update(predicted, None, rng.standard_normal(2), linear)
        assert np.linalg.eigvalsh(predicted.cov - belief.cov).min() >= -1e-10

    x0, u = equilibrium
    model = GeneratorModel(params)
    predicted = predict(FilterBelief(x0, np.diag([1e-4, 1e-6, 1e-4, 1e-4])), u, model)
    posterior = update(predicted, u, model.measurement(x0, u) + np.array([0.01, 1e-3, 0.02]), model)
    assert np.linalg.eigvalsh(predicted.cov - posterior.cov).min() >= -1e-10


def test_huge_r_override_leaves_prediction_unchanged():
    model = LinearModel(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    predicted = FilterBelief(np.array([0.3, -0.2]), np.array([[1.0, 0.2], [0.2, 0.5]]))
    posterior = update(predicted, None, np.array([5.0, -4.0]), model, R_override=1e12 * model.R)
    assert np.max(np.abs(posterior.mean - predicted.mean)) < 1e-6


def test_point_order_does_not_change_outputs(monkeypatch, params, equilibrium):
    from app.core import cubature_filter

    x0, u = equilibrium
    model = GeneratorModel(params)
    prior = FilterBelief(x0 + np.array([1e-3, 0.0, 1e-3, -1e-3]), np.diag([1e-4, 1e-6, 1e-4, 1e-4]))
    z = model.measurement(x0, u) + np.array([0.01, 1e-3, 0.02])
    reference = update(predict(prior, u, model), u, z, model)

    order = np.random.default_rng(3).permutation(8)
    original = cubature_filter.cubature_points

    def shuffled(n):
        points, weights = original(n)
        return points[order], weights[order]

    monkeypatch.setattr(cubature_filter, "cubature_points", shuffled)
    permuted = update(predict(prior, u, model), u, z, model)
    np.testing.assert_allclose(permuted.mean, reference.mean, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(permuted.cov, reference.cov, rtol=1e-9, atol=1e-16)

    again = update(predict(prior, u, model), u, z, model)
    np.testing.assert_array_equal(again.mean, permuted.mean)
    np.testing.assert_array_equal(again.cov, permuted.cov)


def test_robust_update_with_zero_innovation_matches_plain_update(params, equilibrium):
    from app.core.robustifier import HuberConfig, robust_update

    x0, u = equilibrium
    model = GeneratorModel(params)
    predicted = predict(FilterBelief(x0, np.diag([1e-4, 1e-6, 1e-4, 1e-4])), u, model)
    z = measurement_moments(predicted, u, model).z_hat
    plain = update(predicted, u, z, model)
    robust = robust_update(predicted, u, z, model, HuberConfig(1.5))
    np.testing.assert_array_equal(robust.mean, plain.mean)
    np.testing.assert_array_equal(robust.cov, plain.cov)
    np.testing.assert_array_equal(robust.diagnostics.weights, np.ones(3))
