"""
Third-degree spherical-radial cubature Kalman filter.

The filter is generic over a ``ModelInterface``: anything exposing ``n``,
``m`` and the four callbacks below. Callbacks receive the cubature points
as a (2n, n) array and must return one row per point.
"""
import logging
import time
from dataclasses import dataclass
from typing import Iterable, List, Optional, Protocol, Tuple

import numpy as np
from scipy import linalg

from app.core.exceptions import DSEError, FilterStepError
from app.core.numerics import SymMatrix, cholesky, symmetrize

logger = logging.getLogger(__name__)


class ModelInterface(Protocol):
    n: int
    m: int

    def transition(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def measurement(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def process_noise(self, x: np.ndarray, u: np.ndarray) -> SymMatrix: ...

    def measurement_noise(self, x: np.ndarray, u: np.ndarray) -> SymMatrix: ...


@dataclass
class BeliefDiagnostics:
    innovation: np.ndarray
    innovation_cov: np.ndarray
    gain: np.ndarray
    weights: np.ndarray


@dataclass
class FilterBelief:
    mean: np.ndarray
    cov: SymMatrix
    step_index: int = 0
    diagnostics: Optional[BeliefDiagnostics] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean size {self.mean.size}")

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass
class Frame:
    """One sample: input u and measurement z at t_k; u_hold is the input held over [t_{k-1}, t_k]."""
    u: np.ndarray
    z: np.ndarray
    u_hold: Optional[np.ndarray] = None

    @property
    def prediction_input(self) -> np.ndarray:
        return self.u if self.u_hold is None else self.u_hold


@dataclass
class MeasurementMoments:
    """Predicted measurement statistics before the noise term is added."""
    z_hat: np.ndarray
    spread: SymMatrix
    cross_cov: np.ndarray
    R: SymMatrix


def cubature_points(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit points +-sqrt(n) e_i as rows of a (2n, n) array, and their equal weights."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    scaled = np.sqrt(n) * np.eye(n)
    points = np.vstack([scaled, -scaled])
    weights = np.full(2 * n, 1.0 / (2 * n))
    return points, weights


def _propagate_points(mean: np.ndarray, cov: SymMatrix) -> np.ndarray:
    S = cholesky(cov)
    unit, _ = cubature_points(mean.size)
    return mean + unit @ S.T


def _weighted_mean(points: np.ndarray) -> np.ndarray:
    return points.sum(axis=0) / points.shape[0]


def _weighted_cov(a_dev: np.ndarray, b_dev: np.ndarray) -> np.ndarray:
    return (a_dev.T @ b_dev) / a_dev.shape[0]


def predict(belief: FilterBelief, u, model: ModelInterface) -> FilterBelief:
    """Time update: x_{k+1/k}, P_{k+1/k}."""
    u = np.asarray(u, dtype=float)
    points = _propagate_points(belief.mean, belief.cov)
    propagated = np.asarray(model.transition(points, u), dtype=float)
    mean = _weighted_mean(propagated)
    dev = propagated - mean
    cov = symmetrize(_weighted_cov(dev, dev) + model.process_noise(belief.mean, u))
    return FilterBelief(mean=mean, cov=cov, step_index=belief.step_index + 1)


def measurement_moments(predicted: FilterBelief, u, model: ModelInterface) -> MeasurementMoments:
    u = np.asarray(u, dtype=float)
    points = _propagate_points(predicted.mean, predicted.cov)
    Z = np.asarray(model.measurement(points, u), dtype=float)
    z_hat = _weighted_mean(Z)
    z_dev = Z - z_hat
    x_dev = points - predicted.mean
    return MeasurementMoments(
        z_hat=z_hat,
        spread=_weighted_cov(z_dev, z_dev),
        cross_cov=_weighted_cov(x_dev, z_dev),
        R=np.asarray(model.measurement_noise(predicted.mean, u), dtype=float),
    )


def correct(predicted: FilterBelief, moments: MeasurementMoments, z, R: SymMatrix,
            weights: Optional[np.ndarray] = None) -> FilterBelief:
    """Gain, posterior mean and covariance for a given measurement covariance R."""
    z = np.asarray(z, dtype=float)
    P_zz = symmetrize(moments.spread + R)
    S_zz = cholesky(P_zz)
    gain = linalg.cho_solve((S_zz, True), moments.cross_cov.T).T
    innovation = z - moments.z_hat
    mean = predicted.mean + gain @ innovation
    cov = symmetrize(predicted.cov - gain @ P_zz @ gain.T)
    if weights is None:
        weights = np.ones(z.size)
    return FilterBelief(
        mean=mean,
        cov=cov,
        step_index=predicted.step_index,
        diagnostics=BeliefDiagnostics(innovation=innovation, innovation_cov=P_zz, gain=gain, weights=weights),
    )


def update(predicted: FilterBelief, u, z, model: ModelInterface,
           R_override: Optional[SymMatrix] = None) -> FilterBelief:
    """Measurement update; R_override replaces the model R in P_zz."""
    moments = measurement_moments(predicted, u, model)
    R = moments.R if R_override is None else np.asarray(R_override, dtype=float)
    return correct(predicted, moments, z, R)


def run_filter(model: ModelInterface, initial: FilterBelief, frames: Iterable[Frame],
               robustify: bool = False, huber=None, step_times: Optional[List[float]] = None) -> List[FilterBelief]:
    """
    Predict/update over every frame; one posterior per frame.

    With ``robustify`` each update goes through the Huber-corrected R.
    Step failures are re-raised as FilterStepError carrying the step index.
    When ``step_times`` is given, the wall time of each predict+update (s)
    is appended to it.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("frames must be non-empty")
    if robustify:
        from app.core.robustifier import HuberConfig, robust_update
        huber = huber or HuberConfig()

    beliefs = []
    belief = initial
    for frame in frames:
        started = time.perf_counter()
        try:
            predicted = predict(belief, frame.prediction_input, model)
            if robustify:
                belief = robust_update(predicted, frame.u, frame.z, model, huber)
            else:
                belief = update(predicted, frame.u, frame.z, model)
        except DSEError as e:
            raise FilterStepError(belief.step_index + 1, e) from e
        if step_times is not None:
            step_times.append(time.perf_counter() - started)
        beliefs.append(belief)
    return beliefs
