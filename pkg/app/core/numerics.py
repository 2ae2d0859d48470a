"""
Small dense symmetric-matrix helpers used by the filter.

Matrices are plain ``numpy`` arrays; ``SymMatrix`` is only a name for
readability. Dimensions up to ``MAX_DIM`` are supported.
"""
import logging

import numpy as np
from scipy import linalg

from app.core.exceptions import NotPositiveDefinite

logger = logging.getLogger(__name__)

SymMatrix = np.ndarray

MAX_DIM = 16
JITTER_START = 1e-12
JITTER_LIMIT = 1e-6


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not 1 <= A.shape[0] <= MAX_DIM:
        raise ValueError(f"matrix dimension {A.shape[0]} outside 1..{MAX_DIM}")
    return A


def symmetrize(A) -> SymMatrix:
    """Return (A + A^T) / 2."""
    A = _as_square(A)
    return (A + A.T) / 2.0


def cholesky(P) -> np.ndarray:
    """
    Lower-triangular factor S with P = S S^T.

    P is symmetrized first. If the factorization fails, diagonal jitter
    starting at 1e-12 * trace(P) is added and doubled until it reaches
    1e-6 * trace(P); past that NotPositiveDefinite is raised.
    """
    P = symmetrize(P)
    if not np.all(np.isfinite(P)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return linalg.cholesky(P, lower=True)
    except linalg.LinAlgError:
        pass

    trace = float(np.trace(P))
    if trace <= 0.0:
        raise NotPositiveDefinite(f"non-positive trace {trace:.3e}")

    eye = np.eye(P.shape[0])
    eps = JITTER_START * trace
    while eps <= JITTER_LIMIT * trace:
        try:
            S = linalg.cholesky(P + eps * eye, lower=True)
            logger.debug(f"Cholesky repaired with jitter {eps:.3e}")
            return S
        except linalg.LinAlgError:
            eps *= 2.0
    raise NotPositiveDefinite(f"Cholesky failed after jitter up to {JITTER_LIMIT:g} * trace")


def sym_solve(P, B) -> np.ndarray:
    """Solve P X = B for SPD P through its Cholesky factor (no explicit inverse)."""
    S = cholesky(P)
    return linalg.cho_solve((S, True), np.asarray(B, dtype=float))
