"""
Huber equivalent-weight correction of the measurement covariance.

Residuals are standardized by the innovation covariance computed with the
unmodified R. Channels with |r'| > c get their variance inflated by |r'|/c
and the update is then carried out with the corrected R.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.core.cubature_filter import FilterBelief, ModelInterface, correct, measurement_moments
from app.core.exceptions import DegenerateVariance
from app.core.numerics import SymMatrix, symmetrize

logger = logging.getLogger(__name__)

RECOMMENDED_C = (1.3, 2.0)


@dataclass(frozen=True)
class HuberConfig:
    c: float = 1.5

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"Huber constant must be positive, got {self.c}")
        if not RECOMMENDED_C[0] <= self.c <= RECOMMENDED_C[1]:
            logger.warning(f"Huber constant {self.c:.3f} outside the usual range {RECOMMENDED_C}")


def standardized_residuals(innovation, P_zz: SymMatrix) -> np.ndarray:
    """r'_i = r_i / sqrt((P_zz)_ii)."""
    variances = np.diag(np.asarray(P_zz, dtype=float))
    if np.any(~(variances > 0)):
        raise DegenerateVariance(f"innovation variances must be positive, got {variances}")
    return np.asarray(innovation, dtype=float) / np.sqrt(variances)


def channel_weights(r_std, cfg: HuberConfig) -> np.ndarray:
    """Per-channel Huber weight min(1, c/|r'|)."""
    magnitude = np.abs(np.asarray(r_std, dtype=float))
    flagged = magnitude > cfg.c
    weights = np.ones_like(magnitude)
    weights[flagged] = cfg.c / magnitude[flagged]
    return weights


def offdiagonal_weight(r_i: float, r_j: float, sigma_ij: float, cfg: HuberConfig) -> float:
    """Equivalent weight for an off-diagonal covariance entry; zero when sigma_ij is zero."""
    if sigma_ij == 0.0:
        return 0.0
    largest = max(abs(r_i), abs(r_j))
    if largest <= cfg.c:
        return 1.0 / sigma_ij
    return cfg.c / (sigma_ij * largest)


def huber_weights(r_std, cfg: HuberConfig, R: SymMatrix) -> np.ndarray:
    """Equivalent weight matrix P_bar."""
    R = np.asarray(R, dtype=float)
    r_std = np.asarray(r_std, dtype=float)
    diag = np.diag(R)
    if np.any(~(diag > 0)):
        raise DegenerateVariance(f"measurement variances must be positive, got {diag}")
    m = diag.size
    P_bar = np.zeros((m, m))
    P_bar[np.diag_indices(m)] = channel_weights(r_std, cfg) / diag
    for i in range(m):
        for j in range(m):
            if i != j:
                P_bar[i, j] = offdiagonal_weight(r_std[i], r_std[j], R[i, j], cfg)
    return P_bar


def _corrected_R(r_std: np.ndarray, R: np.ndarray, cfg: HuberConfig) -> SymMatrix:
    P_bar = huber_weights(r_std, cfg, R)
    if np.count_nonzero(P_bar - np.diag(np.diag(P_bar))):
        return symmetrize(np.linalg.inv(P_bar))
    magnitude = np.abs(r_std)
    R_bar = R.copy()
    for i in np.flatnonzero(magnitude > cfg.c):
        R_bar[i, i] = R[i, i] * (magnitude[i] / cfg.c)
    return R_bar


def robust_R(innovation, P_zz_pre: SymMatrix, R: SymMatrix, cfg: HuberConfig) -> SymMatrix:
    """
    Corrected covariance R_bar = P_bar^-1.

    For diagonal R the inverse is taken channel by channel so that
    unflagged channels keep R_ii bit-for-bit.
    """
    return _corrected_R(standardized_residuals(innovation, P_zz_pre), np.asarray(R, dtype=float), cfg)


def robust_update(predicted: FilterBelief, u, z, model: ModelInterface, cfg: HuberConfig) -> FilterBelief:
    """Measurement update with R replaced by the Huber-corrected R_bar."""
    moments = measurement_moments(predicted, u, model)
    innovation = np.asarray(z, dtype=float) - moments.z_hat
    r_std = standardized_residuals(innovation, symmetrize(moments.spread + moments.R))
    R_bar = _corrected_R(r_std, moments.R, cfg)
    return correct(predicted, moments, z, R_bar, weights=channel_weights(r_std, cfg))
